"""Command-line entry point: ``fairshare <command> <config> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .allocation import solve_allocation, verify_kkt
from .ctmc import exact_stationary, simulate
from .errors import FairshareError
from .geometry import build_geometry
from .harness import (DEFAULT_REL_TOL, check_bounds, emit_report, estimate_record, events_for,
                      identity_suite, load_config, read_sweep_csv, run_sweep)
from .inner_product import build_M
from .network import derive_traffic_profile, validate_network


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_state(text: str, cfg) -> np.ndarray:
    """Parse ``"r1:2,r2:3"`` (all flows in the first phase) or ``"r1.k2:1"``
    (phases numbered from 1) into a per-phase count vector."""
    spec, dists = cfg.spec, cfg.dists
    offsets = np.cumsum([0] + [d.n_phases for d in dists])
    index = {rid: i for i, rid in enumerate(spec.route_ids)}
    n = np.zeros(int(offsets[-1]), dtype=np.int64)
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.rpartition(":")
        if not sep:
            raise ValueError(f"bad state entry {item!r}; expected route:count")
        phase = 0
        if key not in index and ".k" in key:
            key, _, ph = key.rpartition(".k")
            phase = int(ph) - 1
        if key not in index:
            raise ValueError(f"unknown route {key!r}")
        r = index[key]
        if not 0 <= phase < dists[r].n_phases:
            raise ValueError(f"route {key!r} has no phase {phase + 1}")
        count = int(val)
        if count < 0:
            raise ValueError(f"negative count in {item!r}")
        n[offsets[r] + phase] += count
    return n


def _context(cfg, epsilon):
    profile = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, epsilon)
    M = build_M(cfg.dists, cfg.spec.weights, cfg.lam0, cfg.defaults.get("quad_tol", 1e-10))
    return profile, build_geometry(cfg.spec, cfg.dists, profile, M)


def _print(obj):
    print(json.dumps(obj, indent=2, default=lambda v: v.tolist() if hasattr(v, "tolist") else str(v)))


def cmd_validate(args, cfg):
    report = validate_network(cfg.spec)
    out = report.to_dict()
    if report.ok:
        try:
            prof = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, 0.5)
            out["critical_links"] = [cfg.spec.link_ids[i] for i in prof.critical]
            out["route_loads"] = dict(zip(cfg.spec.route_ids, prof.route_loads.tolist()))
        except FairshareError as exc:
            out["valid"] = False
            out["violations"].append({"code": "traffic", "message": str(exc)})
    _print(out)
    return 0 if out["valid"] else 1


def cmd_alloc(args, cfg):
    n = parse_state(args.state, cfg)
    offsets = np.cumsum([0] + [d.n_phases for d in cfg.dists])
    totals = np.add.reduceat(n, offsets[:-1])
    alloc = solve_allocation(cfg.spec, totals, tol=args.tol)
    kkt = verify_kkt(cfg.spec, totals, alloc, tol=max(args.tol * 10, 1e-9))
    _print({"state": dict(zip(cfg.spec.route_ids, totals.tolist())),
            "allocation": alloc.to_dict(cfg.spec), "kkt": kkt.to_dict()})
    return 0 if kkt.ok else 1


def cmd_simulate(args, cfg):
    profile, geo = _context(cfg, args.epsilon)
    events = args.events or events_for(args.epsilon, cfg.defaults.get("event_scale", 16000.0))
    est = simulate(cfg.spec, cfg.dists, profile, geo, events, args.warmup, args.seed,
                   args.replication)
    rec = estimate_record(est, cfg.spec.link_ids)
    if args.out:
        emit_report([rec], args.out)
    rec.update({"se_perp_norm": est.se_perp_norm, "collapse_ratio": est.collapse_ratio,
                "eps_weighted_mean": args.epsilon * est.mean_weighted_flows,
                "sim_time": est.sim_time})
    _print(rec)
    return 0


def cmd_exact(args, cfg):
    profile, geo = _context(cfg, args.epsilon)
    cap = args.cap if args.cap is not None else cfg.defaults.get("cap", 100)
    est = exact_stationary(cfg.spec, cfg.dists, profile, cap, geo)
    rec = estimate_record(est, cfg.spec.link_ids)
    if args.out:
        emit_report([rec], args.out)
    rec.update({"cap": cap, "states": int(len(est.states)), "boundary_mass": est.boundary_mass,
                "truncation_error": est.truncation_error,
                "eps_weighted_mean": args.epsilon * est.mean_weighted_flows})
    _print(rec)
    return 0


def cmd_sweep(args, cfg):
    d = cfg.defaults
    report = run_sweep(cfg, args.epsilons, args.replications or d.get("replications", 1),
                       args.seed if args.seed is not None else d.get("seed", 0),
                       event_scale=args.event_scale, warmup=args.warmup)
    if args.out:
        emit_report(report, args.out)
    for row in report.rows:
        print(f"eps={row.epsilon:g} eps*E[sum kN]={row.eps_weighted_mean:.4f} "
              f"+/- {row.eps_weighted_se:.4f} collapse={row.collapse_ratio:.4f} "
              f"events={row.events} failed={row.failed}")
    for f in report.failures:
        print(f"cell eps={f['epsilon']:g} replication={f['replication']} failed: {f['error']}",
              file=sys.stderr)
    return 0 if not report.failures else 1


def cmd_check(args, cfg):
    checks = identity_suite(cfg, n_states=args.states, epsilon=args.epsilon, seed=args.seed)
    ok = True
    for c in checks:
        ok &= c.ok
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}: {c.value:.3e} (limit {c.limit:.1e})")
    if args.sweep:
        report = read_sweep_csv(args.sweep)
        profile = derive_traffic_profile(cfg.spec, cfg.lam0, cfg.dists, report.rows[0].epsilon)
        verdict = check_bounds(report, cfg.spec, profile,
                               args.rel_tol or cfg.defaults.get("rel_tol", DEFAULT_REL_TOL))
        if args.verdict_out:
            emit_report(verdict, args.verdict_out)
        _print(verdict.to_dict())
        ok &= verdict.ok
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairshare", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a network config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("alloc", help="solve the allocation at one state")
    p.add_argument("config")
    p.add_argument("--state", required=True, help='e.g. "r1:2,r2:3" or "r1.k2:1"')
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_alloc)

    p = sub.add_parser("simulate", help="simulate the chain at one epsilon")
    p.add_argument("config")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--events", type=int)
    p.add_argument("--warmup", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replication", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("exact", help="stationary law on a truncated state space")
    p.add_argument("config")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--cap", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("sweep", help="simulate over a grid of epsilons")
    p.add_argument("config")
    p.add_argument("--epsilons", type=_floats)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--event-scale", type=float)
    p.add_argument("--warmup", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the identity suite and optional bound verdict")
    p.add_argument("config")
    p.add_argument("--sweep", help="sweep CSV to judge against the bounds")
    p.add_argument("--states", type=int, default=1000)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--verdict-out")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (FairshareError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
