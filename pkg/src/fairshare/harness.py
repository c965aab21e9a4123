"""Configuration loading, epsilon sweeps, bound verdicts and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .allocation import solve_allocation, verify_kkt
from .ctmc import Chain, SimulationEstimate, drift_eval, simulate
from .errors import ConfigError, FairshareError
from .geometry import build_geometry, verify_drift_properties
from .inner_product import build_M, verify_M
from .network import Link, NetworkSpec, Route, derive_traffic_profile, validate_network
from .phasetype import _is_number, _reject_unknown, filesize_from_config, filesize_to_config

DEFAULT_EPSILONS = (0.2, 0.1, 0.05, 0.025)
DEFAULT_EVENT_SCALE = 16000.0
DEFAULT_REL_TOL = 0.15
MIN_EVENTS = 10**4
Z_CI = 1.96

_DEFAULT_KEYS = {
    "epsilons": list, "replications": int, "seed": int, "event_scale": float,
    "warmup": float, "cap": int, "rel_tol": float, "quad_tol": float,
}


@dataclass
class ModelConfig:
    spec: NetworkSpec
    dists: list
    lam0: np.ndarray
    defaults: dict = field(default_factory=dict)

    @property
    def network_hash(self) -> str:
        doc = {
            "links": [[lk.id, lk.capacity] for lk in self.spec.links],
            "routes": [[r.id, list(r.links), r.weight, float(l0), filesize_to_config(d)]
                       for r, l0, d in zip(self.spec.routes, self.lam0, self.dists)],
        }
        raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(raw).hexdigest()[:16]


def parse_config(path):
    """Read a network document; returns ``(spec, dists, lam0, defaults)``.

    Unknown keys are rejected and every error names the offending key path,
    e.g. ``links[0].capacity``.
    """
    cfg = load_config(path)
    return cfg.spec, cfg.dists, cfg.lam0, cfg.defaults


def load_config(path) -> ModelConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc)


def config_from_dict(doc) -> ModelConfig:
    if not isinstance(doc, dict):
        raise ConfigError("", "top level must be an object")
    _reject_unknown(doc, {"links", "routes", "defaults"}, "")
    for key in ("links", "routes"):
        if key not in doc:
            raise ConfigError(key, "missing")
        if not isinstance(doc[key], list):
            raise ConfigError(key, "expected an array")

    links = []
    for i, lk in enumerate(doc["links"]):
        p = f"links[{i}]"
        if not isinstance(lk, dict):
            raise ConfigError(p, "expected an object")
        _reject_unknown(lk, {"id", "capacity"}, p)
        _require(lk, ("id", "capacity"), p)
        if not isinstance(lk["id"], str):
            raise ConfigError(f"{p}.id", "expected a string")
        if not _is_number(lk["capacity"]) or not lk["capacity"] > 0 \
                or not math.isfinite(lk["capacity"]):
            raise ConfigError(f"{p}.capacity", "must be a positive number")
        links.append(Link(lk["id"], float(lk["capacity"])))

    routes, dists, lam0 = [], [], []
    link_ids = {lk.id for lk in links}
    for i, r in enumerate(doc["routes"]):
        p = f"routes[{i}]"
        if not isinstance(r, dict):
            raise ConfigError(p, "expected an object")
        _reject_unknown(r, {"id", "links", "weight", "arrival_rate0", "filesize"}, p)
        _require(r, ("id", "links", "arrival_rate0", "filesize"), p)
        if not isinstance(r["id"], str):
            raise ConfigError(f"{p}.id", "expected a string")
        if not isinstance(r["links"], list) or not all(isinstance(v, str) for v in r["links"]):
            raise ConfigError(f"{p}.links", "expected an array of link ids")
        for j, lid in enumerate(r["links"]):
            if lid not in link_ids:
                raise ConfigError(f"{p}.links[{j}]", f"unknown link {lid!r}")
        weight = r.get("weight", 1.0)
        if not _is_number(weight) or not weight > 0:
            raise ConfigError(f"{p}.weight", "must be a positive number")
        if not _is_number(r["arrival_rate0"]) or not r["arrival_rate0"] > 0:
            raise ConfigError(f"{p}.arrival_rate0", "must be a positive number")
        dists.append(filesize_from_config(r["filesize"], f"{p}.filesize"))
        routes.append(Route(r["id"], tuple(r["links"]), float(weight)))
        lam0.append(float(r["arrival_rate0"]))

    spec = NetworkSpec(tuple(links), tuple(routes))
    report = validate_network(spec)
    if not report.ok:
        raise ConfigError("", "; ".join(v["message"] for v in report.violations))
    defaults = _parse_defaults(doc.get("defaults", {}))
    return ModelConfig(spec, dists, np.array(lam0), defaults)


def _require(obj, keys, path):
    for key in keys:
        if key not in obj:
            raise ConfigError(f"{path}.{key}", "missing")


def _parse_defaults(obj) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError("defaults", "expected an object")
    _reject_unknown(obj, set(_DEFAULT_KEYS), "defaults")
    out = {}
    for key, val in obj.items():
        kind = _DEFAULT_KEYS[key]
        p = f"defaults.{key}"
        if kind is list:
            if not isinstance(val, list) or not all(_is_number(v) for v in val):
                raise ConfigError(p, "expected an array of numbers")
            out[key] = [float(v) for v in val]
        elif kind is int:
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(p, "expected an integer")
            out[key] = val
        else:
            if not _is_number(val):
                raise ConfigError(p, "expected a number")
            out[key] = float(val)
    return out


def _as_config(config) -> ModelConfig:
    if isinstance(config, ModelConfig):
        return config
    if isinstance(config, (str, os.PathLike)):
        return load_config(config)
    if isinstance(config, dict):
        return config_from_dict(config)
    spec, dists, lam0, *rest = config
    return ModelConfig(spec, list(dists), np.asarray(lam0, dtype=float), rest[0] if rest else {})


# ----------------------------------------------------------------------------
# sweeps

@dataclass
class SweepRow:
    epsilon: float
    replications: int
    seed: int
    events: int
    mean_weighted_flows: float
    se_weighted_flows: float
    mean_perp_norm: float
    se_perp_norm: float
    mean_perp_norm_sq: float
    mean_norm: float
    se_norm: float
    collapse_ratio: float
    se_collapse_ratio: float
    mean_unused: dict
    unused_scaled: dict
    failed: int = 0
    seeds: tuple = ()
    network_hash: str = ""

    @property
    def eps_weighted_mean(self) -> float:
        return self.epsilon * self.mean_weighted_flows

    @property
    def eps_weighted_se(self) -> float:
        return self.epsilon * self.se_weighted_flows

    @property
    def sqrt_eps_perp_norm(self) -> float:
        return math.sqrt(self.epsilon) * self.mean_perp_norm

    @property
    def eps_perp_norm_sq(self) -> float:
        return self.epsilon * self.mean_perp_norm_sq


@dataclass
class SweepReport:
    rows: list[SweepRow]
    link_ids: list[str]
    cells: list = field(default_factory=list, repr=False)
    failures: list = field(default_factory=list)
    network_hash: str = ""

    def row(self, epsilon: float) -> SweepRow:
        for r in self.rows:
            if math.isclose(r.epsilon, epsilon, rel_tol=1e-12):
                return r
        raise KeyError(epsilon)


def events_for(epsilon: float, event_scale: float = DEFAULT_EVENT_SCALE) -> int:
    """Events per cell, growing like ``1/epsilon^2`` with the relaxation time."""
    return max(MIN_EVENTS, int(round(event_scale / epsilon**2)))


def _worker_count(cells: int) -> int:
    env = os.environ.get("FAIRSHARE_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise FairshareError(f"FAIRSHARE_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, cells))


def _run_cell(task):
    spec, dists, lam0, geometry, eps, events, warmup, seed, rep = task
    try:
        profile = derive_traffic_profile(spec, lam0, dists, eps)
        return simulate(spec, dists, profile, geometry, events, warmup, seed, rep)
    except FairshareError as exc:
        return f"{type(exc).__name__}: {exc}"


def run_sweep(config, epsilons=None, replications: int = 1, seed: int = 0,
              event_scale: float | None = None, warmup: float | None = None,
              events: int | None = None, workers: int | None = None) -> SweepReport:
    """Simulate every ``(epsilon, replication)`` cell and aggregate per epsilon.

    Cell ``(eps, i)`` uses the stream keyed by ``(seed, i)`` whatever the
    other cells are, so adding replications never changes existing cells.
    Cells that fail are recorded in ``failures`` and the sweep continues.
    """
    cfg = _as_config(config)
    d = cfg.defaults
    epsilons = list(d.get("epsilons", DEFAULT_EPSILONS) if epsilons is None else epsilons)
    if not epsilons:
        raise ValueError("no epsilons given")
    if any(not 0 < e < 1 for e in epsilons) or any(a <= b for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be strictly decreasing in (0, 1)")
    if replications < 1:
        raise ValueError("replications must be at least 1")
    event_scale = d.get("event_scale", DEFAULT_EVENT_SCALE) if event_scale is None else event_scale
    warmup = d.get("warmup", 0.2) if warmup is None else warmup

    spec, dists, lam0 = cfg.spec, cfg.dists, cfg.lam0
    profile = derive_traffic_profile(spec, lam0, dists, epsilons[0])
    M = build_M(dists, spec.weights, lam0, d.get("quad_tol", 1e-10))
    geometry = build_geometry(spec, dists, profile, M)

    tasks = []
    for eps in epsilons:
        ev = events if events is not None else events_for(eps, event_scale)
        for rep in range(replications):
            tasks.append((spec, dists, lam0, geometry, eps, ev, warmup, seed, rep))
    nw = workers if workers is not None else _worker_count(len(tasks))
    if nw <= 1:
        results = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            results = list(pool.map(_run_cell, tasks))

    h = cfg.network_hash
    rows, failures, cells = [], [], []
    for i, eps in enumerate(epsilons):
        chunk = results[i * replications:(i + 1) * replications]
        good = []
        for rep, res in enumerate(chunk):
            if isinstance(res, SimulationEstimate):
                good.append(res)
                cells.append(res)
            else:
                failures.append({"epsilon": eps, "replication": rep, "error": res})
        ev = tasks[i * replications][5]
        rows.append(_aggregate(eps, good, len(chunk) - len(good), seed, ev, replications,
                               spec, h))
    return SweepReport(rows, spec.link_ids, cells, failures, h)


def _aggregate(eps, ests, failed, seed, events, replications, spec, h) -> SweepRow:
    C = spec.capacities
    ids = spec.link_ids
    seeds = tuple(f"{seed}:{r}" for r in range(replications))
    if not ests:
        nan = float("nan")
        return SweepRow(eps, replications, seed, events, nan, nan, nan, nan, nan, nan, nan,
                        nan, nan, {i: nan for i in ids}, {i: nan for i in ids},
                        failed, seeds, h)
    k = len(ests)

    def avg(attr):
        return float(sum(getattr(e, attr) for e in ests) / k)

    def se(attr):
        return float(math.sqrt(sum(getattr(e, attr) ** 2 for e in ests)) / k)

    unused = sum(e.mean_unused for e in ests) / k
    perp, norm = avg("mean_perp_norm"), avg("mean_norm")
    return SweepRow(
        epsilon=float(eps), replications=replications, seed=int(seed), events=int(events),
        mean_weighted_flows=avg("mean_weighted_flows"), se_weighted_flows=se("se_weighted_flows"),
        mean_perp_norm=perp, se_perp_norm=se("se_perp_norm"),
        mean_perp_norm_sq=avg("mean_perp_norm_sq"),
        mean_norm=norm, se_norm=se("se_norm"),
        collapse_ratio=perp / norm if norm > 0 else float("nan"),
        se_collapse_ratio=se("se_collapse_ratio"),
        mean_unused={i: float(u) for i, u in zip(ids, unused)},
        unused_scaled={i: float(u / (eps * c)) for i, u, c in zip(ids, unused, C)},
        failed=failed, seeds=seeds, network_hash=h,
    )


# ----------------------------------------------------------------------------
# verdicts

@dataclass
class BoundVerdict:
    interval: tuple[float, float]
    rel_tol: float
    epsilons: list[float]
    measured: list[float]
    ci: list[float]
    passes: list[bool]
    trend_slope: float
    trend_toward: bool
    collapse_ratios: list[float]
    collapse_decreasing: bool
    perp_growth: list[float]
    perp_growth_ok: bool

    @property
    def bound_pass(self) -> bool:
        return bool(self.passes[-1])

    @property
    def ok(self) -> bool:
        return self.bound_pass and self.collapse_decreasing and self.perp_growth_ok

    def to_dict(self):
        return {
            "interval": list(self.interval), "rel_tol": self.rel_tol,
            "epsilons": list(self.epsilons), "measured": list(self.measured),
            "ci": list(self.ci), "passes": [bool(v) for v in self.passes],
            "bound_pass": self.bound_pass, "trend_slope": self.trend_slope,
            "trend_toward": bool(self.trend_toward),
            "collapse_ratios": list(self.collapse_ratios),
            "collapse_decreasing": bool(self.collapse_decreasing),
            "perp_growth": list(self.perp_growth), "perp_growth_ok": bool(self.perp_growth_ok),
            "ok": self.ok,
        }


def bound_interval(spec: NetworkSpec, profile) -> tuple[float, float]:
    k = spec.weights
    Ls = profile.L_s
    return Ls * float(k.min()), Ls * float(k.max())


def check_bounds(report: SweepReport, spec: NetworkSpec, profile,
                 rel_tol: float = DEFAULT_REL_TOL, max_perp_growth: float = 1.25) -> BoundVerdict:
    """Compare ``eps * E[sum kappa_r N_r]`` with ``[L_s min kappa, L_s max kappa]``.

    Each row passes iff the measurement, widened by its 95% confidence
    half-width, meets the interval widened by ``rel_tol``; the verdict uses
    the smallest epsilon.  Collapse diagnostics: the ratio
    ``E|N_perp| / E|N|`` must not increase as epsilon falls (an increase
    inside the combined confidence half-width is tolerated) and
    ``sqrt(eps) E|N_perp|`` must grow by at most ``max_perp_growth`` per
    halving of epsilon.
    """
    rows = [r for r in report.rows if math.isfinite(r.mean_weighted_flows)]
    if not rows:
        raise ValueError("empty sweep report")
    rows.sort(key=lambda r: -r.epsilon)
    lo, hi = bound_interval(spec, profile)
    eps = [r.epsilon for r in rows]
    meas = [r.eps_weighted_mean for r in rows]
    ci = [Z_CI * r.eps_weighted_se for r in rows]
    passes = [(m + c >= lo * (1 - rel_tol)) and (m - c <= hi * (1 + rel_tol))
              for m, c in zip(meas, ci)]
    slope = float(np.polyfit(eps, meas, 1)[0]) if len(rows) > 1 else 0.0

    def gap(v):
        return max(lo - v, v - hi, 0.0)
    toward = gap(meas[-1]) <= gap(meas[0]) + ci[-1] + ci[0]

    ratios = [r.collapse_ratio for r in rows]
    decreasing = True
    for a, b in zip(rows, rows[1:]):
        band = Z_CI * math.hypot(a.se_collapse_ratio, b.se_collapse_ratio)
        # a cone that is the whole state space leaves nothing to collapse
        degenerate = a.collapse_ratio == 0 and b.collapse_ratio == 0
        if not (degenerate or b.collapse_ratio < a.collapse_ratio + band):
            decreasing = False
    growth = []
    for a, b in zip(rows, rows[1:]):
        halvings = math.log2(a.epsilon / b.epsilon)
        if a.sqrt_eps_perp_norm > 0:
            growth.append((b.sqrt_eps_perp_norm / a.sqrt_eps_perp_norm) ** (1.0 / halvings))
        else:
            growth.append(1.0 if b.sqrt_eps_perp_norm == 0 else math.inf)
    growth_ok = all(g <= max_perp_growth for g in growth)
    return BoundVerdict((lo, hi), rel_tol, eps, meas, ci, passes, slope, bool(toward),
                        ratios, decreasing, growth, growth_ok)


# ----------------------------------------------------------------------------
# identity suite

@dataclass
class IdentityCheck:
    name: str
    value: float
    limit: float
    ok: bool


def identity_suite(config, n_states: int = 1000, epsilon: float = 0.1, seed: int = 0,
                   max_count: int = 20) -> list[IdentityCheck]:
    """Run the deterministic identities on random states of ``config``."""
    cfg = _as_config(config)
    spec, dists, lam0 = cfg.spec, cfg.dists, cfg.lam0
    profile = derive_traffic_profile(spec, lam0, dists, epsilon)
    M = build_M(dists, spec.weights, lam0, cfg.defaults.get("quad_tol", 1e-10))
    geo = build_geometry(spec, dists, profile, M)
    out = []

    ident = verify_M(M, dists, spec.weights, lam0, profile.phase_loads)
    for r, rid in enumerate(ident.routes):
        scale = max(rid.scale, 1.0)
        out.append(IdentityCheck(f"route {r}: symmetry", rid.symmetry, 1e-12 * scale,
                                 rid.symmetry <= 1e-12 * scale))
        out.append(IdentityCheck(f"route {r}: min eigenvalue", rid.min_eig, 0.0, rid.min_eig > 0))
        out.append(IdentityCheck(f"route {r}: rotation", rid.rotation_residual, 1e-8,
                                 rid.rotation_residual <= 1e-8))
        out.append(IdentityCheck(f"route {r}: lyapunov", rid.lyapunov_min_eig, -1e-8,
                                 rid.lyapunov_min_eig >= -1e-8))
        if not rid.hazard_flagged:
            out.append(IdentityCheck(f"route {r}: lyapunov minus eta M", rid.lyapunov_eta_min_eig,
                                     -1e-8, rid.lyapunov_eta_min_eig >= -1e-8))
        out.append(IdentityCheck(f"route {r}: PBH", float(rid.pbh), 1.0, rid.pbh))

    rng = np.random.default_rng(seed)
    chain = Chain(spec, dists, profile)
    K = chain.K
    worst = {k: 0.0 for k in ("kkt", "pU", "dual_identity", "c1", "c2", "p1", "p2", "drift")}
    Mm = M.M
    for _ in range(n_states):
        n = rng.integers(0, max_count + 1, size=K)
        n[rng.random(K) < 0.3] = 0
        totals = np.array(chain.totals(n), dtype=float)
        alloc = solve_allocation(spec, totals)
        res = verify_kkt(spec, totals, alloc).residuals
        worst["kkt"] = max(worst["kkt"], res["stationarity"], res["feasibility"],
                           res["dual_feasibility"])
        worst["pU"] = max(worst["pU"], res["complementary_slackness"])
        worst["dual_identity"] = max(worst["dual_identity"], res["dual_identity"])
        rep = verify_drift_properties(geo, profile, n, alloc)
        scale = 1.0 + float(np.linalg.norm(n))
        worst["c1"] = max(worst["c1"], float(rep.c1_residual.max()) / scale)
        worst["c2"] = max(worst["c2"], float(-rep.c2_slack.min()))
        if rep.p1_residual is not None:
            worst["p1"] = max(worst["p1"], float(rep.p1_residual.max()) / scale)
            worst["p2"] = max(worst["p2"], float(-rep.p2_slack.min()))
        for l in range(spec.L):
            b = geo.generators[l]
            w = Mm @ b
            drift = drift_eval(lambda v: float(w @ v), spec, dists, profile, n, chain)
            C, delta = spec.capacities[l], profile.slack[l]
            target = alloc.U[l] - delta - epsilon * (C - delta)
            worst["drift"] = max(worst["drift"], abs(drift - target))
    limits = {"kkt": 1e-9, "pU": 1e-9, "dual_identity": 1e-9, "c1": 1e-8, "c2": 1e-8,
              "p1": 1e-8, "p2": 1e-8, "drift": 1e-9}
    names = {"kkt": "KKT residual", "pU": "p*U / sum kappa n",
             "dual_identity": "sum p C vs sum kappa n",
             "c1": "load identity residual / (1+|n|)", "c2": "load inequality negative slack",
             "p1": "exponential load identity residual / (1+|n|)",
             "p2": "exponential load inequality negative slack",
             "drift": "w_l drift identity"}
    for key, lim in limits.items():
        if key in ("p1", "p2") and not geo.exponential:
            continue
        out.append(IdentityCheck(names[key], worst[key], lim, worst[key] <= lim))
    return out


# ----------------------------------------------------------------------------
# report files

SIM_COLUMNS = ["epsilon", "replication", "seed", "events", "mean_weighted_flows",
               "se_weighted_flows", "mean_perp_norm", "mean_perp_norm_sq", "mean_norm"]
SWEEP_EXTRA = ["eps_weighted_mean", "collapse_ratio"]
SWEEP_TAIL = ["se_perp_norm", "se_norm", "se_collapse_ratio", "failed", "seeds", "network_hash"]


def sweep_columns(link_ids) -> list[str]:
    return (SIM_COLUMNS + [f"unused_{i}" for i in link_ids] + SWEEP_EXTRA
            + [f"unused_scaled_{i}" for i in link_ids] + SWEEP_TAIL)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _atomic_write(path, write):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sweep_record(row: SweepRow, link_ids) -> list:
    return ([row.epsilon, row.replications, row.seed, row.events, row.mean_weighted_flows,
             row.se_weighted_flows, row.mean_perp_norm, row.mean_perp_norm_sq, row.mean_norm]
            + [row.mean_unused[i] for i in link_ids]
            + [row.eps_weighted_mean, row.collapse_ratio]
            + [row.unused_scaled[i] for i in link_ids]
            + [row.se_perp_norm, row.se_norm, row.se_collapse_ratio, row.failed,
               ";".join(row.seeds), row.network_hash])


def emit_report(obj, path) -> None:
    """Write a sweep report as CSV, or a verdict / plain dict as JSON.

    The file is written to a temporary sibling and renamed into place, so a
    failure never leaves a partial file behind.
    """
    if isinstance(obj, SweepReport):
        cols = sweep_columns(obj.link_ids)

        def write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in obj.rows:
                w.writerow([_fmt(v) for v in _sweep_record(row, obj.link_ids)])
    elif isinstance(obj, list) and obj and isinstance(obj[0], dict):
        cols = list(obj[0])

        def write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for rec in obj:
                w.writerow([_fmt(rec[c]) for c in cols])
    else:
        data = obj.to_dict() if hasattr(obj, "to_dict") else obj

        def write(fh):
            json.dump(data, fh, indent=2, sort_keys=False, default=_json_default)
            fh.write("\n")
    _atomic_write(path, write)


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def read_sweep_csv(path) -> SweepReport:
    """Inverse of :func:`emit_report` for sweep reports."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        recs = [dict(zip(header, line)) for line in reader]
    link_ids = [c[len("unused_"):] for c in header
                if c.startswith("unused_") and not c.startswith("unused_scaled_")]
    if header != sweep_columns(link_ids):
        raise ValueError(f"{path}: not a sweep report")
    rows = []
    for rec in recs:
        rows.append(SweepRow(
            epsilon=float(rec["epsilon"]), replications=int(rec["replication"]),
            seed=int(rec["seed"]), events=int(rec["events"]),
            mean_weighted_flows=float(rec["mean_weighted_flows"]),
            se_weighted_flows=float(rec["se_weighted_flows"]),
            mean_perp_norm=float(rec["mean_perp_norm"]), se_perp_norm=float(rec["se_perp_norm"]),
            mean_perp_norm_sq=float(rec["mean_perp_norm_sq"]),
            mean_norm=float(rec["mean_norm"]), se_norm=float(rec["se_norm"]),
            collapse_ratio=float(rec["collapse_ratio"]),
            se_collapse_ratio=float(rec["se_collapse_ratio"]),
            mean_unused={i: float(rec[f"unused_{i}"]) for i in link_ids},
            unused_scaled={i: float(rec[f"unused_scaled_{i}"]) for i in link_ids},
            failed=int(rec["failed"]),
            seeds=tuple(s for s in rec["seeds"].split(";") if s),
            network_hash=rec["network_hash"],
        ))
    h = rows[0].network_hash if rows else ""
    return SweepReport(rows, link_ids, network_hash=h)


def estimate_record(est, link_ids) -> dict:
    """Row in the simulate/exact CSV schema; exact rows carry no seed and zero SE."""
    exact = not isinstance(est, SimulationEstimate)
    rec = {
        "epsilon": float(est.epsilon), "replication": 0 if exact else int(est.replication),
        "seed": "" if exact else int(est.seed), "events": 0 if exact else int(est.events),
        "mean_weighted_flows": float(est.mean_weighted_flows),
        "se_weighted_flows": 0.0 if exact else float(est.se_weighted_flows),
        "mean_perp_norm": float(est.mean_perp_norm),
        "mean_perp_norm_sq": float(est.mean_perp_norm_sq),
        "mean_norm": float(est.mean_norm),
    }
    for i, u in zip(link_ids, est.mean_unused):
        rec[f"unused_{i}"] = float(u)
    return rec
