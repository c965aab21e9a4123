import json
import math

import pytest

from fairshare.errors import ConfigError
from fairshare.harness import (SweepReport, SweepRow, bound_interval, check_bounds,
                               config_from_dict, emit_report, events_for, identity_suite,
                               load_config, parse_config, read_sweep_csv, run_sweep,
                               sweep_columns)
from fairshare.network import derive_traffic_profile

from conftest import CONFIGS


def minimal():
    return {"links": [{"id": "l1", "capacity": 1.0}],
            "routes": [{"id": "r1", "links": ["l1"], "arrival_rate0": 1.0,
                        "filesize": {"type": "exponential", "rate": 1.0}}]}


def test_minimal_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(minimal()))
    spec, dists, lam0, defaults = parse_config(p)
    assert spec.L == 1 and spec.R == 1 and spec.weights[0] == 1.0
    assert dists[0].n_phases == 1
    assert lam0.tolist() == [1.0]
    assert defaults == {}


@pytest.mark.parametrize("mutate,where", [
    (lambda d: d["links"][0].update(capacity=-1.0), "links[0].capacity"),
    (lambda d: d["links"][0].update(speed=3), "links[0].speed"),
    (lambda d: d["routes"][0].update(links=["zz"]), "routes[0].links[0]"),
    (lambda d: d["routes"][0].pop("arrival_rate0"), "routes[0].arrival_rate0"),
    (lambda d: d["routes"][0].update(weight=0), "routes[0].weight"),
    (lambda d: d["routes"][0]["filesize"].update(rate="x"), "routes[0].filesize.rate"),
    (lambda d: d.update(extra=1), ".extra"),
    (lambda d: d.update(defaults={"seed": 1.5}), "defaults.seed"),
    (lambda d: d.update(defaults={"horizon": 1}), "defaults.horizon"),
])
def test_config_errors(mutate, where):
    doc = minimal()
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert info.value.path == where
    assert str(info.value).startswith(where)


def test_config_json_syntax_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"links": [}')
    with pytest.raises(ConfigError, match="line 1 column"):
        load_config(p)


def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.json")):
        cfg = load_config(p)
        derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, 0.1)


def test_events_scale():
    assert events_for(0.1, 16000) == 1_600_000
    assert events_for(0.9, 1.0) == 10_000


@pytest.fixture(scope="module")
def small_sweep():
    cfg = load_config(CONFIGS / "single_link.json")
    return cfg, run_sweep(cfg, [0.5, 0.3], replications=2, seed=7, events=40_000, workers=1)


def test_sweep_rows(small_sweep):
    cfg, rep = small_sweep
    assert [r.epsilon for r in rep.rows] == [0.5, 0.3]
    assert len(rep.cells) == 4 and not rep.failures
    for row in rep.rows:
        assert row.seeds == ("7:0", "7:1")
        assert abs(row.eps_weighted_mean - (1 - row.epsilon)) <= 4 * row.eps_weighted_se
        assert row.unused_scaled["l1"] == pytest.approx(
            row.mean_unused["l1"] / row.epsilon)
        assert row.network_hash == cfg.network_hash


def test_sweep_replication_prefix(small_sweep):
    cfg, rep = small_sweep
    one = run_sweep(cfg, [0.5, 0.3], replications=1, seed=7, events=40_000, workers=1)
    for a, b in zip(one.cells, [c for c in rep.cells if c.replication == 0]):
        assert a.mean_weighted_flows == b.mean_weighted_flows
        assert a.collapse_ratio == b.collapse_ratio


def test_sweep_parallel_matches_serial(small_sweep, monkeypatch):
    cfg, rep = small_sweep
    monkeypatch.setenv("FAIRSHARE_THREADS", "2")
    par = run_sweep(cfg, [0.5, 0.3], replications=2, seed=7, events=40_000)
    for a, b in zip(rep.rows, par.rows):
        assert a.mean_weighted_flows == b.mean_weighted_flows
        assert a.se_collapse_ratio == b.se_collapse_ratio


def test_sweep_preconditions():
    cfg = load_config(CONFIGS / "single_link.json")
    with pytest.raises(ValueError):
        run_sweep(cfg, [0.1, 0.2], events=10_000)
    with pytest.raises(ValueError):
        run_sweep(cfg, [0.2, 0.1], replications=0, events=10_000)


def test_sweep_marks_failed_cells(monkeypatch):
    from fairshare import harness
    cfg = load_config(CONFIGS / "single_link.json")
    real = harness.simulate

    def flaky(spec, dists, profile, *args):
        if profile.epsilon < 0.4:
            raise harness.FairshareError("boom")
        return real(spec, dists, profile, *args)

    monkeypatch.setattr(harness, "simulate", flaky)
    rep = run_sweep(cfg, [0.5, 0.3], events=10_000, workers=1)
    assert rep.rows[0].failed == 0 and math.isfinite(rep.rows[0].mean_weighted_flows)
    assert rep.rows[1].failed == 1 and math.isnan(rep.rows[1].mean_weighted_flows)
    assert rep.failures[0]["epsilon"] == 0.3


def _row(eps, value, se, ratio=0.1, perp=1.0):
    return SweepRow(eps, 1, 0, 10_000, value / eps, se / eps, perp / math.sqrt(eps), 0.0,
                    1.0, perp / math.sqrt(eps) / ratio, 0.0, ratio, 0.0, {"l1": 0.0},
                    {"l1": 0.0})


def test_check_bounds_point_interval():
    cfg = load_config(CONFIGS / "single_link.json")
    prof = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, 0.05)
    rep = SweepReport([_row(0.2, 0.8, 0.01, 0.2), _row(0.1, 0.9, 0.01, 0.15),
                       _row(0.05, 0.95, 0.01, 0.1)], ["l1"])
    v = check_bounds(rep, cfg.spec, prof, rel_tol=0.1)
    assert v.interval == (1.0, 1.0)
    assert v.bound_pass and v.collapse_decreasing and v.trend_toward
    assert v.trend_slope < 0
    d = v.to_dict()
    assert d["interval"] == [1.0, 1.0] and d["passes"] == [False, True, True]


def test_check_bounds_weighted_interval():
    cfg = load_config(CONFIGS / "linear2_weighted.json")
    prof = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, 0.05)
    assert bound_interval(cfg.spec, prof) == (1.0, 2.0)
    for value in (1.0, 1.5, 2.0):
        rep = SweepReport([_row(0.05, value, 0.0)], ["l1", "l2"])
        assert check_bounds(rep, cfg.spec, prof, rel_tol=0.0).bound_pass
    rep = SweepReport([_row(0.05, 2.5, 0.0)], ["l1", "l2"])
    assert not check_bounds(rep, cfg.spec, prof).bound_pass


def test_check_bounds_collapse_flags():
    cfg = load_config(CONFIGS / "single_link.json")
    prof = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, 0.05)
    rep = SweepReport([_row(0.2, 0.8, 0.01, 0.1, 1.0), _row(0.1, 0.9, 0.01, 0.2, 1.5)], ["l1"])
    v = check_bounds(rep, cfg.spec, prof)
    assert not v.collapse_decreasing
    assert not v.perp_growth_ok
    assert not v.ok


def test_check_bounds_empty():
    cfg = load_config(CONFIGS / "single_link.json")
    prof = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, 0.05)
    with pytest.raises(ValueError, match="empty"):
        check_bounds(SweepReport([], ["l1"]), cfg.spec, prof)


def test_csv_roundtrip(small_sweep, tmp_path):
    _, rep = small_sweep
    p = tmp_path / "s.csv"
    emit_report(rep, p)
    header = p.read_text().splitlines()[0].split(",")
    assert header == sweep_columns(["l1"])
    assert header[:10] == ["epsilon", "replication", "seed", "events", "mean_weighted_flows",
                           "se_weighted_flows", "mean_perp_norm", "mean_perp_norm_sq",
                           "mean_norm", "unused_l1"]
    back = read_sweep_csv(p)
    for a, b in zip(rep.rows, back.rows):
        assert a == b
        assert float(_col(p, "eps_weighted_mean", rep.rows.index(a))) == a.epsilon * \
            a.mean_weighted_flows


def _col(path, name, i):
    lines = path.read_text().splitlines()
    return lines[i + 1].split(",")[lines[0].split(",").index(name)]


def test_verdict_json(small_sweep, tmp_path):
    cfg, rep = small_sweep
    prof = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, 0.3)
    v = check_bounds(rep, cfg.spec, prof)
    p = tmp_path / "v.json"
    emit_report(v, p)
    d = json.loads(p.read_text())
    assert d["interval"] == [1.0, 1.0]
    assert d["passes"] == v.passes and len(d["epsilons"]) == 2


def test_emit_atomic(tmp_path, small_sweep):
    _, rep = small_sweep
    with pytest.raises(OSError):
        emit_report(rep, tmp_path / "missing" / "s.csv")
    assert not (tmp_path / "missing").exists()
    assert list(tmp_path.iterdir()) == []


def test_identity_suite_passes():
    checks = identity_suite(CONFIGS / "linear2_weighted.json", n_states=50)
    assert all(c.ok for c in checks), [c for c in checks if not c.ok]
    names = {c.name for c in checks}
    assert "exponential load identity residual / (1+|n|)" in names and "w_l drift identity" in names
