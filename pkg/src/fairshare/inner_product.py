"""The block-diagonal inner-product matrix for phase-type flow counts.

Route ``r`` contributes the block

    M_r = (kappa_r / lam0_r) * int_0^inf f(s) f(s)^T / d(s) ds,

with ``f(s) = exp(S_r s) 1`` and ``d(s) = pi_r (-S_r)^{-1} exp(S_r s) 1``, the
expected residual work of a flow still in the system after ``s`` units of
service.  Both ``f`` and the row vector ``pi_r (-S_r)^{-1}`` are entrywise
nonnegative, so ``d`` is evaluated as a sum of nonnegative terms and keeps full
relative accuracy in the tail.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import QuadratureError
from .phasetype import PhaseTypeDist, expm_ones, survival_and_hazard

GL_NODES = 15
MAX_PANELS = 20000


@dataclass(frozen=True, eq=False)
class InnerProductMatrix:
    M: np.ndarray
    blocks: tuple[np.ndarray, ...]
    offsets: np.ndarray
    quad_info: tuple[dict, ...]
    chol: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def inner(self, y, z) -> float:
        return float(np.asarray(y, dtype=float) @ self.M @ np.asarray(z, dtype=float))

    def norm(self, y) -> float:
        return float(np.linalg.norm(self.chol @ np.asarray(y, dtype=float)))

    def to_euclid(self, y) -> np.ndarray:
        """Map ``y`` so that the M-norm becomes the Euclidean norm."""
        return self.chol @ np.asarray(y, dtype=float)


def _gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


_GL_X, _GL_W = _gauss_legendre(GL_NODES)


class _RouteIntegrand:
    def __init__(self, dist: PhaseTypeDist):
        self.dist = dist
        # residual-work weights c = pi (-S)^{-1} >= 0 entrywise
        self.c = np.linalg.solve(-dist.S.T, dist.initial)
        self.evals = 0

    def __call__(self, s):
        f = expm_ones(self.dist, s)
        d = f @ self.c
        self.evals += len(s)
        return f[:, :, None] * f[:, None, :] / d[:, None, None]

    def panel(self, a, b):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        vals = self(mid + half * _GL_X)
        return half * np.tensordot(_GL_W, vals, axes=1)


def _adaptive(fn: _RouteIntegrand, a, b, tol, depth=0, budget=None):
    coarse = fn.panel(a, b)
    return _refine(fn, a, b, coarse, tol, depth, budget)


def _refine(fn, a, b, coarse, tol, depth, budget):
    m = 0.5 * (a + b)
    left = fn.panel(a, m)
    right = fn.panel(m, b)
    fine = left + right
    err = float(np.max(np.abs(fine - coarse)))
    budget[0] += 1
    if err <= tol or depth > 40:
        if err > tol:
            budget[1] = False
        return fine, err
    if budget[0] > MAX_PANELS:
        budget[1] = False
        return fine, err
    il, el = _refine(fn, a, m, left, 0.5 * tol, depth + 1, budget)
    ir, er = _refine(fn, m, b, right, 0.5 * tol, depth + 1, budget)
    return il + ir, el + er


def route_block(dist: PhaseTypeDist, kappa: float, lam0: float, quad_tol: float = 1e-10):
    """Return ``(M_r, info)`` for one route; ``info`` records the quadrature."""
    K = dist.n_phases
    scale = kappa / lam0
    if K == 1:
        return np.array([[scale]]), {"sigma_max": np.inf, "error_estimate": 0.0,
                                     "panels": 0, "closed_form": True}
    fn = _RouteIntegrand(dist)
    # integrate the unscaled integrand to an absolute tolerance on M_r
    tol = quad_tol / max(scale, 1e-300)
    mu_min = dist.min_rate
    sigma_max = 10.0 / mu_min
    while True:
        f_tail = expm_ones(dist, [sigma_max])[0]
        g_tail = fn(np.array([sigma_max]))[0]
        if f_tail.max() < 1e-3 * min(tol, 1e-12) and g_tail.max() < 1e-3 * tol * mu_min:
            break
        sigma_max *= 1.25
        if sigma_max > 1e4 / mu_min:
            raise QuadratureError("quadrature not converged: integrand does not decay")

    budget = [0, True]
    edges = np.linspace(0.0, sigma_max, 17)
    total = np.zeros((K, K))
    err = 0.0
    per_panel = tol / (4 * (len(edges) - 1))
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = _adaptive(fn, a, b, per_panel, budget=budget)
        total += val
        err += e
    tail, e_tail = _adaptive(fn, sigma_max, 2 * sigma_max, per_panel, budget=budget)
    tail_norm = float(np.max(np.abs(tail)))
    if not budget[1] or tail_norm > 0.25 * tol:
        raise QuadratureError(
            f"quadrature not converged (error {err:.3g}, tail {tail_norm:.3g}, tol {tol:.3g})")
    total = 0.5 * (total + total.T)
    info = {"sigma_max": float(sigma_max), "error_estimate": float(scale * (err + tail_norm)),
            "panels": budget[0], "closed_form": False}
    return scale * total, info


def build_M(dists, kappa, lam0, quad_tol: float = 1e-10) -> InnerProductMatrix:
    """Assemble the block-diagonal inner-product matrix and its Cholesky factor.

    Raises :class:`QuadratureError` if a block's quadrature misses
    ``quad_tol`` and ``numpy.linalg.LinAlgError`` (reported as ``"M not PD"``)
    if the assembled matrix is not positive definite.
    """
    if quad_tol <= 0:
        raise ValueError("quad_tol must be positive")
    kappa = np.asarray(kappa, dtype=float)
    lam0 = np.asarray(lam0, dtype=float)
    blocks, infos = [], []
    for d, k, lam in zip(dists, kappa, lam0):
        Mr, info = route_block(d, k, lam, quad_tol)
        blocks.append(Mr)
        infos.append(info)
    offsets = np.cumsum([0] + [b.shape[0] for b in blocks])
    K = int(offsets[-1])
    M = np.zeros((K, K))
    for b, o in zip(blocks, offsets[:-1]):
        M[o:o + b.shape[0], o:o + b.shape[0]] = b
    try:
        Lc = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise QuadratureError("M not PD") from None
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise QuadratureError("M not PD")
    for b in blocks:
        b.setflags(write=False)
    M.setflags(write=False)
    R = Lc.T.copy()
    R.setflags(write=False)
    return InnerProductMatrix(M, tuple(blocks), offsets, tuple(infos), R)


def pbh_test(S: np.ndarray, tol: float = 1e-9) -> bool:
    """Hautus test for the pair ``(S, 1)``: ``rank [lam I - S, 1] = K`` at every
    eigenvalue ``lam``.  Equivalently no eigenvector of ``S^T`` is orthogonal
    to the all-ones vector."""
    K = S.shape[0]
    eig = np.linalg.eigvals(S)
    seen = []
    for lam in eig:
        if any(abs(lam - s) <= tol * max(1.0, abs(s)) for s in seen):
            continue
        seen.append(lam)
        aug = np.hstack([lam * np.eye(K) - S, np.ones((K, 1))])
        sv = np.linalg.svd(aug, compute_uv=False)
        if np.sum(sv > tol * max(sv[0], 1.0)) < K:
            return False
    return True


@dataclass
class RouteIdentities:
    symmetry: float
    min_eig: float
    rotation_residual: float
    lyapunov_min_eig: float
    eta: float
    hazard_flagged: bool
    lyapunov_eta_min_eig: float
    pbh: bool
    scale: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class IdentityReport:
    routes: list[RouteIdentities]

    def to_dict(self):
        return {"routes": [r.to_dict() for r in self.routes]}


def verify_M(M: InnerProductMatrix, dists, kappa, lam0, loads, hazard_bounds=None) -> IdentityReport:
    """Evaluate the identities the geometry relies on, route by route.

    ``loads`` is the concatenated per-phase base load vector.  The Lyapunov
    eigenvalues are raw (not normalised); compare them against
    ``scale = ||M_r||_2``.
    """
    kappa = np.asarray(kappa, dtype=float)
    loads = np.asarray(loads, dtype=float)
    out = []
    for r, (d, Mr) in enumerate(zip(dists, M.blocks)):
        o0, o1 = int(M.offsets[r]), int(M.offsets[r + 1])
        rho = loads[o0:o1]
        negS = -d.S
        rot = (rho @ Mr @ negS.T) / kappa[r]
        rot_res = float(np.max(np.abs(rot - 1.0)))
        lyap = 0.5 * (Mr @ negS.T + negS @ Mr)
        lyap = 0.5 * (lyap + lyap.T)
        if hazard_bounds is not None:
            hb = hazard_bounds[r]
        else:
            hb = survival_and_hazard(d).bound
        eta = hb.eta
        out.append(RouteIdentities(
            symmetry=float(np.max(np.abs(Mr - Mr.T))),
            min_eig=float(np.min(np.linalg.eigvalsh(Mr))),
            rotation_residual=rot_res,
            lyapunov_min_eig=float(np.min(np.linalg.eigvalsh(lyap))),
            eta=float(eta),
            hazard_flagged=bool(hb.flagged),
            lyapunov_eta_min_eig=float(np.min(np.linalg.eigvalsh(lyap - eta * Mr))),
            pbh=pbh_test(d.S),
            scale=float(np.linalg.norm(Mr, 2)),
        ))
    return IdentityReport(out)
