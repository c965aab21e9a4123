import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from fairshare.allocation import solve_allocation
from fairshare.errors import SolverError
from fairshare.geometry import (build_geometry, nnls, project_cone, project_subspace,
                                verify_drift_properties)
from fairshare.inner_product import build_M
from fairshare.network import derive_traffic_profile
from fairshare.phasetype import exponential

from conftest import LINEAR_LAM0, linear2, single_link


def context(spec, dists, lam0, eps=0.1):
    prof = derive_traffic_profile(spec, lam0, dists, eps)
    M = build_M(dists, spec.weights, lam0)
    return build_geometry(spec, dists, prof, M), prof


@pytest.fixture
def linear_ctx(linear_net):
    return context(*linear_net)


@pytest.fixture
def mixed_ctx(linear_mixed):
    return context(*linear_mixed)


def test_linear_generators(linear_ctx):
    ctx, _ = linear_ctx
    np.testing.assert_allclose(ctx.generators, [[0.6, 0.0, 0.4], [0.0, 0.6, 0.4]], rtol=1e-14)
    assert ctx.critical == (0, 1)


def test_phase_generators_layout(mixed_ctx):
    ctx, prof = mixed_ctx
    # route 2 (phases 2..3) is not on link 1, route 1 (phases 0..1) not on link 2
    assert np.all(ctx.generators[0, 2:4] == 0)
    assert np.all(ctx.generators[1, 0:2] == 0)
    np.testing.assert_allclose(ctx.generators[0, 0:2], prof.phase_loads[0:2])


def test_single_link_scalar():
    ctx, prof = context(single_link(), [exponential(1.0)], [1.0])
    np.testing.assert_allclose(ctx.generators, [[1.0]])


def test_weights_halve_generators(linear_net):
    spec, dists, lam0 = linear_net
    a, _ = context(spec, dists, lam0)
    b, _ = context(linear2((2.0, 2.0, 2.0)), dists, lam0)
    np.testing.assert_allclose(b.generators, a.generators / 2, rtol=1e-15)


def test_projector_idempotent(mixed_ctx):
    ctx, _ = mixed_ctx
    assert np.linalg.norm(ctx.P_s @ ctx.P_s - ctx.P_s) <= 1e-9
    np.testing.assert_allclose(ctx.gram, ctx.gram.T, atol=1e-15)
    assert np.linalg.eigvalsh(ctx.gram).min() > 0


def test_subspace_generator_fixed(mixed_ctx):
    ctx, _ = mixed_ctx
    for i in range(len(ctx.critical)):
        res = project_subspace(ctx, ctx.B_s[i])
        np.testing.assert_allclose(res.parallel, ctx.B_s[i], atol=1e-12)
        np.testing.assert_allclose(res.coefficients, np.eye(len(ctx.critical))[i], atol=1e-12)


def test_subspace_orthogonal_input(mixed_ctx):
    ctx, _ = mixed_ctx
    # M-orthogonal complement of the rows of B_s
    A = ctx.B_s @ ctx.M.M
    null = np.linalg.svd(A)[2][len(ctx.critical):]
    n = null.sum(axis=0)
    res = project_subspace(ctx, n)
    np.testing.assert_allclose(res.parallel, 0, atol=1e-12)


def test_subspace_least_squares_oracle(mixed_ctx):
    ctx, _ = mixed_ctx
    rng = np.random.default_rng(3)
    R = ctx.M.chol
    for _ in range(50):
        n = rng.integers(0, 20, ctx.M.dim).astype(float)
        alpha = np.linalg.lstsq(R @ ctx.B_s.T, R @ n, rcond=None)[0]
        res = project_subspace(ctx, n)
        np.testing.assert_allclose(res.coefficients, alpha, rtol=1e-9, atol=1e-9)


def test_cone_interior(linear_ctx):
    ctx, _ = linear_ctx
    n = 2 * ctx.B_s[0] + 3 * ctx.B_s[1]
    res = project_cone(ctx, n)
    np.testing.assert_allclose(res.coefficients, [2, 3], rtol=1e-12)
    np.testing.assert_allclose(res.parallel, n, atol=1e-12)
    assert res.distance <= 1e-12


def test_cone_polar(mixed_ctx):
    ctx, _ = mixed_ctx
    n = -(ctx.B_s[0] + ctx.B_s[1])
    res = project_cone(ctx, n)
    assert np.all(res.coefficients == 0)
    assert res.distance == pytest.approx(ctx.M.norm(n), rel=1e-12)


def _grid_distance(ctx, n):
    R = ctx.M.chol
    A = R @ ctx.B_s.T
    y = R @ n
    top = 2 * np.linalg.norm(y) / np.linalg.norm(A, axis=0).min() + 1
    g = np.linspace(0, top, 401)
    a1, a2 = np.meshgrid(g, g, indexing="ij")
    res = y[None, None, :] - a1[..., None] * A[:, 0] - a2[..., None] * A[:, 1]
    d = np.linalg.norm(res, axis=-1)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    sol = scipy.optimize.minimize(lambda a: np.linalg.norm(y - A @ a), [g[i], g[j]],
                                  bounds=[(0, None), (0, None)], method="L-BFGS-B",
                                  options={"ftol": 1e-15, "gtol": 1e-12})
    return min(sol.fun, d[i, j])


def test_cone_brute_force(mixed_ctx):
    ctx, _ = mixed_ctx
    rng = np.random.default_rng(5)
    for _ in range(15):
        n = rng.integers(0, 15, ctx.M.dim).astype(float)
        n[rng.random(ctx.M.dim) < 0.4] = 0
        got = project_cone(ctx, n).distance
        ref = _grid_distance(ctx, n)
        assert got <= ref * (1 + 1e-6) + 1e-9
        assert got >= ref * (1 - 1e-6) - 1e-9


@given(st.lists(st.integers(0, 30), min_size=5, max_size=5))
@settings(max_examples=150, deadline=None)
def test_projection_invariants(counts):
    ctx, _ = _MIXED[0]
    n = np.array(counts, dtype=float)
    M = ctx.M
    nn = M.norm(n)
    cone = project_cone(ctx, n)
    sub = project_subspace(ctx, n)
    assert np.all(cone.coefficients >= 0)
    assert abs(M.inner(cone.parallel, cone.perpendicular)) <= 1e-8 * max(nn**2, 1.0)
    for b in ctx.B_s:
        assert M.inner(b, cone.perpendicular) <= 1e-8 * max(nn, 1.0) * M.norm(b)
        assert abs(M.inner(b, sub.perpendicular)) <= 1e-8 * max(nn, 1.0) * M.norm(b)
    for res in (cone, sub):
        assert M.norm(res.parallel) ** 2 + res.distance**2 == pytest.approx(nn**2, rel=1e-8,
                                                                             abs=1e-9)
    assert sub.distance <= cone.distance + 1e-9 * max(nn, 1.0)


_MIXED = []


@pytest.fixture(autouse=True, scope="module")
def _mixed_cache():
    from conftest import mean_one
    from fairshare.phasetype import erlang, hyperexponential
    spec = linear2()
    dists = [erlang(2, 2.0), hyperexponential([0.75, 1.5], [0.5, 0.5]), mean_one("exp")]
    _MIXED.append(context(spec, dists, LINEAR_LAM0))
    yield
    _MIXED.clear()


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 3))
@settings(max_examples=200, deadline=None)
def test_nnls_against_scipy(m, k, seed):
    rng = np.random.default_rng(seed * 100 + m * 10 + k)
    A = rng.normal(size=(m, k))
    b = rng.normal(size=m)
    x, r = nnls(A, b)
    xs, rs = scipy.optimize.nnls(A, b)
    assert np.all(x >= 0)
    assert r == pytest.approx(rs, rel=1e-9, abs=1e-12)


def test_nnls_nonconvergence():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(SolverError, match="NNLS not converged"):
        nnls(A, np.array([1.0, 1.0]), max_iter=0)


def _random_states(ctx, rng, count):
    for _ in range(count):
        n = rng.integers(0, 25, ctx.M.dim)
        n[rng.random(ctx.M.dim) < 0.3] = 0
        yield n


def _totals(prof, n):
    return np.add.reduceat(n, prof.phase_offsets[:-1])


def test_p1_p2_exponential(linear_ctx):
    ctx, prof = linear_ctx
    spec = linear2()
    rng = np.random.default_rng(11)
    for n in _random_states(ctx, rng, 300):
        alloc = solve_allocation(spec, _totals(prof, n))
        rep = verify_drift_properties(ctx, prof, n, alloc)
        scale = 1 + np.linalg.norm(n)
        assert rep.p1_residual.max() <= 1e-9 * scale
        assert rep.c1_residual.max() <= 1e-9 * scale
        np.testing.assert_allclose(rep.c1_residual, rep.p1_residual, atol=1e-12 * scale)
        assert rep.p2_slack.min() >= -1e-8
        assert rep.c2_slack.min() >= -1e-8


def test_c1_c2_phase_type(mixed_ctx):
    ctx, prof = mixed_ctx
    spec = linear2()
    rng = np.random.default_rng(12)
    for n in _random_states(ctx, rng, 300):
        alloc = solve_allocation(spec, _totals(prof, n))
        rep = verify_drift_properties(ctx, prof, n, alloc)
        assert rep.p1_residual is None
        assert rep.c1_residual.max() <= 1e-8 * (1 + np.linalg.norm(n))
        assert rep.c2_slack.min() >= -1e-8


def test_empty_state_c1(mixed_ctx):
    ctx, prof = mixed_ctx
    alloc = solve_allocation(linear2(), [0, 0, 0])
    rep = verify_drift_properties(ctx, prof, np.zeros(ctx.M.dim), alloc)
    np.testing.assert_array_equal(alloc.U, [1.0, 1.0])
    assert rep.c1_residual.max() <= 1e-12


def test_equality_point_c2():
    # single link, exponential: n x = rho0 makes bhat = b and the slack exactly zero
    spec = single_link()
    ctx, prof = context(spec, [exponential(1.0)], [1.0])
    alloc = solve_allocation(spec, [4])
    rep = verify_drift_properties(ctx, prof, np.array([4]), alloc)
    assert rep.c2_slack[0] == pytest.approx(0.0, abs=1e-15)
    assert rep.perp_norm == 0.0
    assert rep.subspace_perp_norm == 0.0
