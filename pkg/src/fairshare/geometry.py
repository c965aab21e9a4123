"""Heavy-traffic cone and subspace, projections under the M inner product,
and the per-link drift properties of that inner product."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .allocation import Allocation, FlowState
from .errors import FairshareError, SolverError
from .inner_product import InnerProductMatrix
from .network import NetworkSpec, TrafficProfile
from .phasetype import survival_and_hazard


@dataclass(frozen=True, eq=False)
class GeometryContext:
    generators: np.ndarray        # (L, K): row l is b^(l)
    critical: tuple[int, ...]
    B_s: np.ndarray               # (L_s, K)
    M: InnerProductMatrix
    gram: np.ndarray              # B_s M B_s^T
    gram_chol: tuple = field(repr=False)
    P_s: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    A_cone: np.ndarray = field(repr=False)   # R B_s^T, cone generators in Euclidean coordinates
    phase_route: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    etas: np.ndarray = field(repr=False)
    mus: np.ndarray = field(repr=False)
    link_mask: np.ndarray = field(repr=False, default=None)   # (L, K) = H[:, phase_route]
    route_mask: np.ndarray = field(repr=False, default=None)  # (L, R) = H
    exponential: bool = False

    @property
    def eta_min(self) -> float:
        return float(self.etas.min())

    @property
    def kappa_min(self) -> float:
        return float(self.kappa.min())


def build_geometry(spec: NetworkSpec, dists, profile: TrafficProfile,
                   M: InnerProductMatrix) -> GeometryContext:
    """Generators ``b^(l)[r, k] = rho0[r, k] 1{l in r} / kappa_r`` and cached factorisations."""
    kappa = spec.weights
    H = spec.H
    offsets = profile.phase_offsets
    K = int(offsets[-1])
    if M.dim != K:
        raise FairshareError("inner-product matrix does not match the phase layout")
    phase_route = np.repeat(np.arange(spec.R), np.diff(offsets))
    gens = H[:, phase_route] * (profile.phase_loads / kappa[phase_route])[None, :]
    crit = tuple(profile.critical)
    B_s = gens[list(crit)]
    gram = B_s @ M.M @ B_s.T
    gram = 0.5 * (gram + gram.T)
    try:
        cf = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError:
        raise FairshareError("B_sMB_s^T singular") from None
    if np.min(np.linalg.eigvalsh(gram)) <= 1e-14 * np.max(np.abs(gram)):
        raise FairshareError("B_sMB_s^T singular")
    P_s = B_s.T @ scipy.linalg.cho_solve(cf, B_s @ M.M)
    S = scipy.linalg.block_diag(*[d.S for d in dists])
    etas = np.array([survival_and_hazard(d).bound.eta for d in dists])
    mus = np.array([1.0 / d.mean for d in dists])
    expo = all(d.n_phases == 1 for d in dists)
    for arr in (gens, B_s, gram, P_s, S):
        arr.setflags(write=False)
    return GeometryContext(gens, crit, B_s, M, gram, cf, P_s, S, M.chol @ B_s.T,
                           phase_route, kappa, etas, mus, H[:, phase_route], H, expo)


@dataclass
class ProjectionResult:
    parallel: np.ndarray
    perpendicular: np.ndarray
    coefficients: np.ndarray
    distance: float
    kind: str


def _vec(n) -> np.ndarray:
    if isinstance(n, FlowState):
        return n.counts.astype(float)
    return np.asarray(n, dtype=float)


def project_subspace(ctx: GeometryContext, n) -> ProjectionResult:
    n = _vec(n)
    alpha = scipy.linalg.cho_solve(ctx.gram_chol, ctx.B_s @ (ctx.M.M @ n))
    par = ctx.B_s.T @ alpha
    perp = n - par
    return ProjectionResult(par, perp, alpha, ctx.M.norm(perp), "subspace")


def nnls(A: np.ndarray, b: np.ndarray, max_iter: int | None = None):
    """Lawson-Hanson active-set NNLS; ties enter lowest index first.

    Returns ``(x, residual_norm)``.  Raises :class:`SolverError` with the
    current iterate if the outer loop does not terminate.
    """
    m, k = A.shape
    if max_iter is None:
        max_iter = 3 * k + 10
    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    scale = max(np.linalg.norm(A) * np.linalg.norm(b), 1e-300)
    tol = 1e-13 * scale
    w = A.T @ (b - A @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > tol:
        it += 1
        if it > max_iter:
            raise SolverError("NNLS not converged", iterate=x)
        cand = np.where(passive, -np.inf, w)
        # argmax returns the first maximiser, i.e. the lowest index on ties
        passive[int(np.argmax(cand))] = True
        while True:
            z = np.zeros(k)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            neg = passive & (z <= 0)
            ratio = np.where(neg, x / np.where(neg, x - z, 1.0), np.inf)
            step = float(np.min(ratio))
            x = x + step * (z - x)
            passive &= x > 1e-15 * max(1.0, np.max(np.abs(x)))
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(b - A @ x))


def project_cone(ctx: GeometryContext, n) -> ProjectionResult:
    """Projection onto the cone spanned by the critical-link generators."""
    n = _vec(n)
    y = ctx.M.chol @ n
    alpha, dist = nnls(ctx.A_cone, y)
    par = ctx.B_s.T @ alpha
    perp = n - par
    return ProjectionResult(par, perp, alpha, ctx.M.norm(perp), "cone")


@dataclass
class PropertyReport:
    c1_residual: np.ndarray
    c2_slack: np.ndarray
    p1_residual: np.ndarray | None
    p2_slack: np.ndarray | None
    eta_min: float
    subspace_gap: np.ndarray       # |alpha^s_l - p_l| over critical links
    perp_norm: float
    subspace_perp_norm: float
    weighted_total: float

    def to_dict(self):
        def conv(v):
            return None if v is None else np.asarray(v).tolist()
        return {
            "c1_residual": conv(self.c1_residual), "c2_slack": conv(self.c2_slack),
            "p1_residual": conv(self.p1_residual), "p2_slack": conv(self.p2_slack),
            "eta_min": self.eta_min, "subspace_gap": conv(self.subspace_gap),
            "perp_norm": self.perp_norm, "subspace_perp_norm": self.subspace_perp_norm,
            "weighted_total": self.weighted_total,
        }


def verify_drift_properties(ctx: GeometryContext, profile: TrafficProfile, n,
                            alloc: Allocation) -> PropertyReport:
    """Per-link residuals of the rotated-load identity and the norm inequality.

    Unused bandwidth comes from ``alloc`` and slack from ``profile``; neither
    is recomputed here.
    """
    n = _vec(n)
    Mm = ctx.M.M
    nx = n * alloc.x[ctx.phase_route]
    diff = profile.phase_loads - nx
    rotated = (-ctx.S.T) @ diff
    kr = ctx.kappa[ctx.phase_route]
    L = ctx.generators.shape[0]
    c1 = np.empty(L)
    c2 = np.empty(L)
    for l in range(L):
        b = ctx.generators[l]
        bhat = ctx.link_mask[l] * nx / kr
        c1[l] = abs(b @ Mm @ rotated - (alloc.U[l] - profile.slack[l]))
        dvec = b - bhat
        c2[l] = dvec @ Mm @ rotated - ctx.kappa_min * ctx.eta_min * (dvec @ Mm @ dvec)
    p1 = p2 = None
    if ctx.exponential:
        lam0 = profile.lam0
        mu = ctx.mus
        ip = ctx.kappa / lam0
        flow = lam0 - n * alloc.x * mu
        p1 = np.empty(L)
        p2 = np.empty(L)
        for l in range(L):
            mask = ctx.route_mask[l]
            b = mask * profile.route_loads / ctx.kappa
            bhat = mask * n * alloc.x / ctx.kappa
            p1[l] = abs(np.sum(ip * b * flow) - (alloc.U[l] - profile.slack[l]))
            dvec = b - bhat
            p2[l] = np.sum(ip * dvec * flow) - ctx.kappa_min * mu.min() * np.sum(ip * dvec**2)
    sub = project_subspace(ctx, n)
    crit = list(ctx.critical)
    gap = np.abs(sub.coefficients - alloc.p[crit])
    cone = project_cone(ctx, n)
    weighted = float(np.sum(kr * n))
    return PropertyReport(c1, c2, p1, p2, ctx.eta_min, gap, cone.distance, sub.distance, weighted)
