"""Weighted proportionally fair rate allocation.

For route totals ``n`` the allocation maximises ``sum_r kappa_r n_r log x_r``
subject to ``H (n x) <= C``.  We minimise the dual

    D(p) = -sum_r w_r log q_r(p) + C.p,   w_r = kappa_r n_r,  q = H^T p,

over ``p >= 0`` by projected Newton and recover ``x_r = kappa_r / q_r``.  The
dual has one variable per link, so every linear solve is tiny.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .network import NetworkSpec

MAX_ITER = 200
ARMIJO = 1e-4


@dataclass(frozen=True)
class FlowState:
    """Per-phase flow counts, concatenated route by route."""

    counts: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(counts < 0):
            raise ValueError("flow counts must be nonnegative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=int))

    @property
    def totals(self) -> np.ndarray:
        return np.add.reduceat(self.counts, self.offsets[:-1]) if self.counts.size else \
            np.zeros(0, dtype=np.int64)

    @classmethod
    def from_totals(cls, totals):
        totals = np.asarray(totals, dtype=np.int64)
        return cls(totals, np.arange(totals.size + 1))


@dataclass
class Allocation:
    x: np.ndarray
    p: np.ndarray
    U: np.ndarray
    residuals: dict = field(default_factory=dict)
    iterations: int = 0

    def to_dict(self, spec: NetworkSpec | None = None):
        if spec is None:
            return {"x": self.x.tolist(), "p": self.p.tolist(), "U": self.U.tolist(),
                    "residuals": dict(self.residuals), "iterations": self.iterations}
        return {
            "x": dict(zip(spec.route_ids, self.x.tolist())),
            "p": dict(zip(spec.link_ids, self.p.tolist())),
            "U": dict(zip(spec.link_ids, self.U.tolist())),
            "residuals": dict(self.residuals),
            "iterations": self.iterations,
        }


def _totals(n) -> np.ndarray:
    if isinstance(n, FlowState):
        return n.totals.astype(float)
    return np.asarray(n, dtype=float)


def solve_allocation(spec: NetworkSpec, n, tol: float = 1e-10, p0=None,
                     max_iter: int = MAX_ITER, *, _arrays=None) -> Allocation:
    """Solve the allocation for route totals ``n`` (or a :class:`FlowState`).

    ``p0`` optionally warm-starts the dual iterate.  When several dual vectors
    are optimal the minimum-Euclidean-norm one is returned.  Raises
    :class:`SolverError` (best iterate attached) if the KKT residuals do not
    drop below ``tol`` within ``max_iter`` Newton steps.
    """
    H, C, kappa = _arrays if _arrays is not None else (spec.H, spec.capacities, spec.weights)
    n = _totals(n)
    L, R = H.shape
    x = np.zeros(R)
    p = np.zeros(L)
    active = n > 0
    if not active.any():
        alloc = Allocation(x, p, C.copy(), iterations=0)
        alloc.residuals = kkt_residuals(H, C, kappa, n, alloc)
        return alloc

    w = kappa[active] * n[active]
    rel = H[:, active].any(axis=1)
    A = H[np.ix_(rel, active)]
    Cr = C[rel]
    scale = w.sum()

    if p0 is not None:
        pr = np.maximum(np.asarray(p0, dtype=float)[rel], 0.0)
        if np.any(A.T @ pr <= 0):
            pr = None
    else:
        pr = None
    if pr is None:
        pr = scale / (A.shape[0] * Cr)
        pr = pr + 1e-12 * pr.max()

    pr, it, res = _newton(A, Cr, w, pr, tol, max_iter)
    q = A.T @ pr
    y = w / q
    g = Cr - A @ y
    pr = _canonical_dual(A, Cr, g, q, pr)

    p[rel] = pr
    q_all = H[:, active].T @ p
    x[active] = kappa[active] / q_all
    U = C - H @ (n * x)
    alloc = Allocation(x, p, U, iterations=it)
    alloc.residuals = kkt_residuals(H, C, kappa, n, alloc)
    worst = max(alloc.residuals[k] for k in
                ("stationarity", "feasibility", "complementary_slackness"))
    if not np.isfinite(worst) or worst > tol:
        raise SolverError("solver not converged within max iterations",
                          iterate=alloc, residuals=alloc.residuals)
    return alloc


def _dual_value(A, C, w, p):
    q = A.T @ p
    if np.any(q <= 0):
        return np.inf
    return float(-(w @ np.log(q)) + C @ p)


def _kkt_gap(A, C, w, p):
    q = A.T @ p
    y = w / q
    g = C - A @ y
    feas = np.max(np.maximum(-g, 0.0) / C)
    cs = np.max(p * np.abs(g)) / w.sum()
    return max(feas, cs), g, q


def _newton(A, C, w, p, tol, max_iter):
    target = 1e-3 * tol
    res, g, q = _kkt_gap(A, C, w, p)
    f = _dual_value(A, C, w, p)
    it = 0
    for it in range(1, max_iter + 1):
        if res <= target:
            break
        Hs = (A * (w / q**2)) @ A.T
        # binding set: at the bound and pushing outward
        proj_gap = np.abs(p - np.maximum(p - g / np.maximum(np.diag(Hs), 1e-300), 0.0))
        eps_b = min(1e-8 * max(p.max(), 1e-300), proj_gap.max())
        bind = (p <= eps_b) & (g > 0)
        free = ~bind
        d = np.zeros_like(p)
        if free.any():
            d[free] = _free_step(Hs[np.ix_(free, free)], g[free], p[free])
        d[bind] = g[bind] / np.maximum(np.diag(Hs)[bind], 1e-300)

        pn = np.maximum(p - d, 0.0)
        fn = _dual_value(A, C, w, pn)
        noise = 1e-12 * (abs(f) + w.sum())
        if np.isfinite(fn) and fn <= f + noise and _kkt_gap(A, C, w, pn)[0] < res:
            # full Newton step that shrinks the KKT gap without raising the dual
            # beyond rounding noise; near the optimum Armijo cannot resolve it
            accepted = True
        else:
            accepted = False
            t = 1.0
            while t > 1e-12:
                pn = np.maximum(p - t * d, 0.0)
                fn = _dual_value(A, C, w, pn)
                decrease = t * (g[free] @ d[free]) + g[bind] @ (p[bind] - pn[bind])
                if fn <= f - ARMIJO * decrease:
                    accepted = True
                    break
                t *= 0.5
        if not accepted:
            break
        p = pn
        f = fn
        res, g, q = _kkt_gap(A, C, w, p)
    return p, it, res


def _free_step(HF, gF, pF):
    """Newton step on the range of ``HF`` plus a descent step on its null space.

    Along null directions of the Hessian the dual is linear, so the step
    follows the negative gradient until the first price reaches zero.
    """
    e, V = np.linalg.eigh(HF)
    keep = e > 1e-12 * max(e.max(), 1e-300)
    Vr = V[:, keep]
    coef = Vr.T @ gF
    step = Vr @ (coef / e[keep])
    g_null = gF - Vr @ coef
    if np.linalg.norm(g_null) > 1e-12 * max(np.linalg.norm(gF), 1e-300):
        pos = g_null > 0
        if pos.any():
            step = step + float(np.min(pF[pos] / g_null[pos])) * g_null
    return step


def _canonical_dual(A, C, g, q, p):
    """Replace ``p`` by the minimum-norm optimal dual when it is not unique."""
    tight = np.abs(g) <= 1e-8 * C
    tight |= p > 0
    T = np.flatnonzero(tight)
    if T.size == 0:
        return p
    AT = A[T]
    if np.linalg.matrix_rank(AT) == T.size:
        return p
    best, best_norm = None, np.inf
    for k in range(1, T.size + 1):
        for support in itertools.combinations(range(T.size), k):
            sub = AT[list(support)]
            cand = np.linalg.lstsq(sub.T, q, rcond=None)[0]
            if np.any(cand < -1e-12 * q.max()):
                continue
            if np.max(np.abs(sub.T @ cand - q)) > 1e-10 * q.max():
                continue
            nrm = float(cand @ cand)
            if nrm < best_norm - 1e-14 * nrm:
                full = np.zeros_like(p)
                full[T[list(support)]] = np.maximum(cand, 0.0)
                best, best_norm = full, nrm
    return p if best is None else best


def kkt_residuals(H, C, kappa, n, alloc: Allocation) -> dict:
    n = np.asarray(n, dtype=float)
    x, p = alloc.x, alloc.p
    active = n > 0
    scale = float(kappa @ n)
    q = H.T @ p
    stat = 0.0
    if active.any():
        stat = float(np.max(np.abs(x[active] * q[active] - kappa[active]) / kappa[active]))
    if np.any(x[~active] != 0):
        stat = max(stat, float(np.max(np.abs(x[~active]))))
    U = C - H @ (n * x)
    feas = float(np.max(np.maximum(-U, 0.0) / C))
    denom = scale if scale > 0 else 1.0
    cs = float(np.max(np.abs(p * U)) / denom)
    ident = abs(float(p @ C) - scale) / denom
    dual_feas = float(np.max(np.maximum(-p, 0.0)))
    return {
        "stationarity": stat,
        "feasibility": feas,
        "complementary_slackness": cs,
        "dual_identity": ident,
        "dual_feasibility": dual_feas,
    }


@dataclass
class KKTReport:
    residuals: dict
    tol: float

    @property
    def ok(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def to_dict(self):
        return {"ok": self.ok, "tol": self.tol, "residuals": dict(self.residuals)}


def verify_kkt(spec: NetworkSpec, n, alloc: Allocation, tol: float = 1e-9) -> KKTReport:
    """Recompute the named KKT residuals of ``alloc`` from scratch."""
    return KKTReport(kkt_residuals(spec.H, spec.capacities, spec.weights, _totals(n), alloc), tol)
