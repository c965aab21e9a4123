"""Topology, weights and the heavy-traffic family of arrival rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NetworkError
from .phasetype import PhaseTypeDist, moments_and_loads

CRITICAL_REL_TOL = 1e-9
RANK_TOL = 1e-10


@dataclass(frozen=True)
class Link:
    id: str
    capacity: float


@dataclass(frozen=True)
class Route:
    id: str
    links: tuple[str, ...]
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    links: tuple[Link, ...]
    routes: tuple[Route, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "routes", tuple(
            Route(r.id, tuple(r.links), r.weight) for r in self.routes))

    @property
    def L(self) -> int:
        return len(self.links)

    @property
    def R(self) -> int:
        return len(self.routes)

    @property
    def link_ids(self) -> list[str]:
        return [lk.id for lk in self.links]

    @property
    def route_ids(self) -> list[str]:
        return [r.id for r in self.routes]

    @property
    def capacities(self) -> np.ndarray:
        return np.array([lk.capacity for lk in self.links], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.routes], dtype=float)

    @property
    def H(self) -> np.ndarray:
        """Routing matrix, ``H[l, r] = 1`` iff link ``l`` is on route ``r``."""
        return routing_matrix(self)

    def normalized(self) -> "NetworkSpec":
        """Copy with every weight divided by the largest one."""
        top = max(r.weight for r in self.routes)
        return NetworkSpec(self.links,
                           tuple(Route(r.id, r.links, r.weight / top) for r in self.routes))

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return self.links == other.links and self.routes == other.routes

    def __hash__(self):
        return hash((self.links, self.routes))


def routing_matrix(spec: NetworkSpec) -> np.ndarray:
    index = {lk.id: i for i, lk in enumerate(spec.links)}
    H = np.zeros((spec.L, spec.R))
    for r, route in enumerate(spec.routes):
        for lid in route.links:
            H[index[lid], r] = 1.0
    return H


@dataclass
class ValidationReport:
    violations: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code, message):
        self.violations.append({"code": code, "message": message})

    def to_dict(self):
        return {"valid": self.ok, "violations": list(self.violations)}


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """List every violated structural invariant; never repairs anything."""
    report = ValidationReport()
    seen = set()
    for lk in spec.links:
        if lk.id in seen:
            report.add("duplicate id", f"duplicate id: link {lk.id!r}")
        seen.add(lk.id)
        if not (isinstance(lk.capacity, (int, float)) and math.isfinite(lk.capacity)
                and lk.capacity > 0):
            report.add("capacity", f"link {lk.id!r}: capacity must be positive")
    seen_routes = set()
    for route in spec.routes:
        if route.id in seen_routes:
            report.add("duplicate id", f"duplicate id: route {route.id!r}")
        seen_routes.add(route.id)
        if not route.links:
            report.add("route uses no link", f"route {route.id!r} uses no link")
        if len(set(route.links)) != len(route.links):
            report.add("repeated link", f"route {route.id!r} lists a link twice")
        for lid in route.links:
            if lid not in seen:
                report.add("unknown link", f"route {route.id!r} references unknown link {lid!r}")
        if not (isinstance(route.weight, (int, float)) and math.isfinite(route.weight)
                and route.weight > 0):
            report.add("weight", f"route {route.id!r}: weight must be positive")
    if not spec.links:
        report.add("empty", "network has no links")
    if not spec.routes:
        report.add("empty", "network has no routes")
    return report


@dataclass(frozen=True, eq=False)
class TrafficProfile:
    """Loads and critical links of the base arrival vector, plus the scaled
    arrivals ``(1 - epsilon) * lam0``."""

    lam0: np.ndarray
    epsilon: float
    lam: np.ndarray
    mean_sizes: np.ndarray
    route_loads: np.ndarray
    phase_loads: np.ndarray
    phase_offsets: np.ndarray
    critical: tuple[int, ...]
    slack: np.ndarray

    @property
    def L_s(self) -> int:
        return len(self.critical)

    def route_slice(self, r: int) -> slice:
        return slice(int(self.phase_offsets[r]), int(self.phase_offsets[r + 1]))


def derive_traffic_profile(spec: NetworkSpec, lam0, dists, epsilon: float,
                           rank_tol: float = RANK_TOL,
                           critical_tol: float = CRITICAL_REL_TOL) -> TrafficProfile:
    """Compute loads, critical set and slacks for ``lam0``; scale arrivals by ``1 - epsilon``.

    A link is critical iff its slack is at most ``critical_tol * C``.  Raises
    :class:`NetworkError` for ``"no critical link"``, ``"H_s rank-deficient"``
    or ``"overloaded base"``.
    """
    report = validate_network(spec)
    if not report.ok:
        raise NetworkError("invalid network: " + "; ".join(
            v["message"] for v in report.violations))
    lam0 = np.asarray(lam0, dtype=float)
    if lam0.shape != (spec.R,) or np.any(~np.isfinite(lam0)) or np.any(lam0 <= 0):
        raise NetworkError("base arrival rates must be positive, one per route")
    if len(dists) != spec.R or not all(isinstance(d, PhaseTypeDist) for d in dists):
        raise NetworkError("need one phase-type distribution per route")
    if not 0.0 < epsilon < 1.0:
        raise NetworkError("epsilon must lie in (0, 1)")

    means = np.empty(spec.R)
    route_loads = np.empty(spec.R)
    phase_loads = []
    for r, (d, lam_r) in enumerate(zip(dists, lam0)):
        means[r], pl, route_loads[r] = moments_and_loads(d, lam_r)
        phase_loads.append(pl)
    offsets = np.cumsum([0] + [d.n_phases for d in dists])

    C = spec.capacities
    H = spec.H
    slack = C - H @ route_loads
    over = slack < -critical_tol * C
    if np.any(over):
        bad = [spec.links[i].id for i in np.flatnonzero(over)]
        raise NetworkError(f"overloaded base: links {bad} exceed capacity")
    is_crit = slack <= critical_tol * C
    critical = tuple(int(i) for i in np.flatnonzero(is_crit))
    if not critical:
        raise NetworkError("no critical link")
    Hs = H[list(critical)]
    if _rank(Hs, rank_tol) < len(critical):
        raise NetworkError("H_s rank-deficient")
    return TrafficProfile(
        lam0=lam0, epsilon=float(epsilon), lam=(1.0 - epsilon) * lam0,
        mean_sizes=means, route_loads=route_loads,
        phase_loads=np.concatenate(phase_loads), phase_offsets=offsets,
        critical=critical, slack=slack,
    )


def _rank(A: np.ndarray, rel_tol: float) -> int:
    # column-pivoted QR is rank revealing; |R_ii| decreases along the diagonal
    _, Rm, _ = scipy.linalg.qr(A, pivoting=True, mode="economic")
    d = np.abs(np.diag(Rm))
    if d.size == 0 or d[0] == 0:
        return 0
    return int(np.sum(d > rel_tol * d[0]))
