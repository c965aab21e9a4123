import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from fairshare.errors import ConfigError, DistributionError
from fairshare.phasetype import (build_class_d, density, erlang, expm, expm_ones, exponential,
                                 filesize_from_config, filesize_to_config, hyperexponential,
                                 moments_and_loads, sample, survival, survival_and_hazard)


@st.composite
def class_d(draw, max_blocks=3, max_phases=3):
    nb = draw(st.integers(1, max_blocks))
    rates = draw(st.lists(st.floats(0.2, 5.0), min_size=nb, max_size=nb, unique=True))
    rates = sorted(set(round(r, 3) for r in rates))
    phases = [draw(st.integers(1, max_phases)) for _ in rates]
    K = sum(phases)
    init = np.zeros(K)
    head = 0
    for p in phases:
        init[head] = draw(st.floats(0.05, 1.0))
        for j in range(1, p):
            init[head + j] = draw(st.floats(0.0, 1.0))
        head += p
    return build_class_d(list(zip(rates, phases)), init / init.sum())


def test_exponential_is_one_block():
    d = build_class_d([(1.0, 1)], [1.0])
    assert d.n_phases == 1
    assert d.S.tolist() == [[-1.0]]
    assert d.mean == 1.0


def test_erlang2_structure():
    d = build_class_d([(2.0, 2)], [1.0, 0.0])
    np.testing.assert_array_equal(d.S, [[-2.0, 2.0], [0.0, -2.0]])
    assert d.mean == pytest.approx(1.0, rel=1e-14)
    np.testing.assert_array_equal(d.exit_rates, [0.0, 2.0])
    np.testing.assert_array_equal(d.next_phase, [1, -1])


def test_nondistinct_rates_rejected():
    with pytest.raises(DistributionError, match="nondistinct rates"):
        build_class_d([(1.0, 1), (1.0 + 1e-14, 1)], [0.5, 0.5])


def test_zero_head_mass_rejected():
    with pytest.raises(DistributionError, match="initial mass zero on block head"):
        build_class_d([(1.0, 2), (3.0, 1)], [0.5, 0.5, 0.0])


@pytest.mark.parametrize("init", [[0.5, 0.6], [1.2, -0.2], [0.5], [np.nan, 1.0]])
def test_bad_initial_law_rejected(init):
    with pytest.raises(DistributionError, match="not a distribution"):
        build_class_d([(1.0, 1), (2.0, 1)], init)


def test_loads_exponential():
    mean, load, route = moments_and_loads(exponential(2.0), 1.0)
    assert mean == 0.5
    np.testing.assert_allclose(load, [0.5], rtol=1e-15)
    assert route == 0.5


def test_loads_erlang2():
    mean, load, _ = moments_and_loads(erlang(2, 2.0), 1.0)
    assert mean == pytest.approx(1.0)
    np.testing.assert_allclose(load, [0.5, 0.5], rtol=1e-14)


def test_loads_zero_rate():
    _, load, route = moments_and_loads(hyperexponential([1.0, 2.0], [0.3, 0.7]), 0.0)
    assert np.all(load == 0) and route == 0


@given(class_d())
@settings(max_examples=40, deadline=None)
def test_expm_matches_scipy(d):
    for t in (0.0, 0.3, 2.0, 11.0):
        np.testing.assert_allclose(expm(d, t), scipy.linalg.expm(d.S * t), atol=1e-12, rtol=1e-11)
    np.testing.assert_allclose(expm_ones(d, [0.7])[0], scipy.linalg.expm(d.S * 0.7).sum(axis=1),
                               atol=1e-13)


@given(class_d(), st.floats(0.1, 10.0))
@settings(max_examples=40, deadline=None)
def test_loads_sum_to_route_load(d, lam):
    mean, load, route = moments_and_loads(d, lam)
    assert np.all(load >= 0)
    assert load.sum() == pytest.approx(route, rel=1e-12)
    assert route == pytest.approx(lam * mean, rel=1e-14)


@given(class_d())
@settings(max_examples=25, deadline=None)
def test_survival_properties(d):
    u = np.linspace(0, 60 / d.min_rate, 400)
    G = survival(d, u)
    assert G[0] == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(G) <= 1e-15)
    assert G[-1] < 1e-8
    assert np.all(density(d, u) >= 0)
    area, _ = scipy.integrate.quad(lambda v: float(survival(d, [v])[0]), 0, np.inf, limit=200)
    assert area == pytest.approx(d.mean, rel=1e-6)


def test_hazard_exponential():
    hb = survival_and_hazard(exponential(3.0)).bound
    assert hb.eta == pytest.approx(1.5, rel=1e-12)
    assert not hb.flagged


def test_hazard_hyperexponential():
    # hazard (0.5e^-u + e^-2u) / (0.5e^-u + 0.5e^-2u) decreases from 1.5 toward 1
    d = hyperexponential([1.0, 2.0], [0.5, 0.5])
    sh = survival_and_hazard(d)
    assert sh.hazard[0] == pytest.approx(1.5)
    assert np.all(np.diff(sh.hazard) <= 1e-12)
    assert sh.bound.eta == pytest.approx(0.5, rel=1e-9)
    assert not sh.bound.flagged


def test_hazard_erlang_flagged():
    sh = survival_and_hazard(erlang(2, 2.0))
    assert sh.density[0] == 0.0
    assert sh.bound.flagged and sh.bound.eta == 0.0
    # closed form mu^2 u / (1 + mu u)
    u = sh.u[1:50]
    np.testing.assert_allclose(sh.hazard[1:50], 4 * u / (1 + 2 * u), rtol=1e-10)


@pytest.mark.parametrize("d", [exponential(1.0), erlang(3, 3.0),
                               hyperexponential([0.75, 1.5], [0.5, 0.5]),
                               build_class_d([(1.0, 2), (4.0, 1)], [0.6, 0.1, 0.3])])
def test_sampling_mean(d):
    rng = np.random.default_rng(12345)
    x = sample(d, 100_000, rng)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - d.mean) <= 3 * se


def test_config_sugar_and_roundtrip():
    d = filesize_from_config({"type": "exponential", "rate": 2.0})
    assert d.n_phases == 1 and d.blocks[0].rate == 2.0
    obj = {"type": "class_d", "blocks": [{"rate": 1.0, "phases": 2}, {"rate": 3.0, "phases": 1}],
           "initial": [0.25, 0.25, 0.5]}
    d = filesize_from_config(obj)
    assert filesize_to_config(d) == obj


@pytest.mark.parametrize("obj,where", [
    ({"type": "exponential"}, "filesize.rate"),
    ({"type": "exponential", "rate": 1.0, "shape": 2}, "filesize.shape"),
    ({"type": "gamma"}, "filesize.type"),
    ({"type": "class_d", "blocks": [{"rate": -1, "phases": 1}], "initial": [1]},
     "filesize.blocks[0].rate"),
    ({"type": "class_d", "blocks": [{"rate": 1, "phases": 0}], "initial": [1]},
     "filesize.blocks[0].phases"),
])
def test_config_errors_positioned(obj, where):
    with pytest.raises(ConfigError) as info:
        filesize_from_config(obj)
    assert info.value.path == where
