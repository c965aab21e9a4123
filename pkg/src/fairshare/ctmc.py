"""The flow-count Markov chain.

States are per-phase flow counts ``n[(r, k)]`` concatenated route by route.
From ``n`` the chain moves by

* arrival into phase ``k`` of route ``r`` at rate ``lam_r pi_{r,k}``;
* phase advance ``k -> k+1`` within a block at rate ``n_{r,k} x_r mu^(b)``;
* departure from the last phase of a block at rate ``n_{r,k} x_r mu^(b)``,

where ``x`` is the proportionally fair allocation for the route totals.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .allocation import Allocation, FlowState, solve_allocation
from .errors import SimulationError, SolverError, StateSpaceError
from .geometry import GeometryContext, project_cone
from .network import NetworkSpec, TrafficProfile

MAX_STATES = 10**7


def make_rng(seed: int, replication: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, replication)``.

    Philox streams for different keys are independent, so replications can run
    in any order or in parallel without changing any result.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.Philox(ss))


class Chain:
    """Flattened transition structure shared by the kernel, the exact solver
    and the simulator, plus a per-instance allocation cache keyed by route
    totals (phase moves inside a route never change the allocation)."""

    def __init__(self, spec: NetworkSpec, dists, profile: TrafficProfile, lam=None):
        self.spec = spec
        self.dists = list(dists)
        self.profile = profile
        self.lam = profile.lam if lam is None else np.asarray(lam, dtype=float)
        self.R = spec.R
        self.L = spec.L
        self.offsets = [int(v) for v in profile.phase_offsets]
        self.K = self.offsets[-1]
        self.route_of = []
        self.rates = []
        self.next = []
        self.arrival = []
        for r, d in enumerate(self.dists):
            base = self.offsets[r]
            self.route_of.extend([r] * d.n_phases)
            self.rates.extend(float(v) for v in d.phase_rates)
            self.next.extend(int(j) + base if j >= 0 else -1 for j in d.next_phase)
            self.arrival.extend(float(self.lam[r]) * float(v) for v in d.initial)
        self.kappa = spec.weights
        self._arrays = (spec.H, spec.capacities, spec.weights)
        self._cache: dict[tuple, Allocation] = {}
        self._last_p = None

    def allocation(self, totals: tuple) -> Allocation:
        alloc = self._cache.get(totals)
        if alloc is None:
            try:
                alloc = solve_allocation(self.spec, np.array(totals, dtype=float),
                                         p0=self._last_p, _arrays=self._arrays)
            except SolverError as exc:
                raise SimulationError(f"allocation failure at state {totals}: {exc}",
                                      state=totals) from None
            self._cache[totals] = alloc
            if alloc.p.any():
                self._last_p = alloc.p
        return alloc

    def totals(self, n) -> tuple:
        return tuple(int(sum(n[self.offsets[r]:self.offsets[r + 1]])) for r in range(self.R))

    def transitions(self, n):
        """Yield ``(kind, src, dst, rate)``; ``src``/``dst`` are phase indices or -1."""
        for k in range(self.K):
            if self.arrival[k] > 0:
                yield "arrival", -1, k, self.arrival[k]
        x = self.allocation(self.totals(n)).x
        for k in range(self.K):
            if n[k] > 0:
                rate = n[k] * x[self.route_of[k]] * self.rates[k]
                if rate > 0:
                    j = self.next[k]
                    yield ("phase", k, j, rate) if j >= 0 else ("departure", k, -1, rate)


@dataclass
class Transition:
    delta: np.ndarray
    rate: float
    kind: str


@dataclass
class TransitionSet:
    transitions: list[Transition]

    @property
    def total_rate(self) -> float:
        return float(sum(t.rate for t in self.transitions))

    def __len__(self):
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)


def _state_vec(n) -> np.ndarray:
    if isinstance(n, FlowState):
        return n.counts.astype(np.int64)
    return np.asarray(n, dtype=np.int64)


def transition_kernel(spec: NetworkSpec, dists, profile: TrafficProfile, n,
                      chain: Chain | None = None) -> TransitionSet:
    """All positive-rate transitions out of ``n``."""
    chain = chain or Chain(spec, dists, profile)
    n = _state_vec(n)
    out = []
    for kind, src, dst, rate in chain.transitions(n):
        delta = np.zeros(chain.K, dtype=np.int64)
        if src >= 0:
            delta[src] -= 1
        if dst >= 0:
            delta[dst] += 1
        out.append(Transition(delta, float(rate), kind))
    return TransitionSet(out)


def drift_eval(V, spec: NetworkSpec, dists, profile: TrafficProfile, n,
               chain: Chain | None = None) -> float:
    """``sum_{n'} q(n, n') (V(n') - V(n))`` over the exact transition kernel."""
    n = _state_vec(n)
    v0 = V(n)
    return float(sum(t.rate * (V(n + t.delta) - v0)
                     for t in transition_kernel(spec, dists, profile, n, chain)))


# ----------------------------------------------------------------------------
# exact solution on a truncated state space

def enumerate_states(K: int, cap: int) -> np.ndarray:
    """All ``n`` in ``Z_+^K`` with ``sum(n) <= cap``, in lexicographic order."""
    count = math.comb(cap + K, K)
    if count > MAX_STATES:
        raise StateSpaceError(f"state space too large ({count} states)")
    out = np.empty((count, K), dtype=np.int64)
    row = 0
    cur = [0] * K

    def rec(i, left):
        nonlocal row
        if i == K - 1:
            for v in range(left + 1):
                cur[i] = v
                out[row] = cur
                row += 1
            return
        for v in range(left + 1):
            cur[i] = v
            rec(i + 1, left - v)

    rec(0, cap)
    return out


def truncated_generator(chain: Chain, cap: int):
    """Generator on ``{sum(n) <= cap}``; arrivals leaving the set are dropped."""
    states = enumerate_states(chain.K, cap)
    index = {tuple(s): i for i, s in enumerate(states.tolist())}
    rows, cols, vals = [], [], []
    for i, s in enumerate(states.tolist()):
        full = sum(s) >= cap
        for kind, src, dst, rate in chain.transitions(s):
            if kind == "arrival" and full:
                continue
            t = list(s)
            if src >= 0:
                t[src] -= 1
            if dst >= 0:
                t[dst] += 1
            rows.append(i)
            cols.append(index[tuple(t)])
            vals.append(rate)
    n = len(states)
    Q = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    out = np.asarray(Q.sum(axis=1)).ravel()
    Q = Q - scipy.sparse.diags(out)
    return states, Q.tocsr(), out


def stationary_from_generator(Q) -> np.ndarray:
    """Solve ``pi Q = 0``, ``sum(pi) = 1`` by a sparse direct solve."""
    return _solve_balance(scipy.sparse.csc_matrix(scipy.sparse.csr_matrix(Q).T))


def stationary_from_dtmc(P) -> np.ndarray:
    """Solve ``pi P = pi``, ``sum(pi) = 1``."""
    P = scipy.sparse.csr_matrix(P)
    A = P.T - scipy.sparse.identity(P.shape[0], format="csr")
    return _solve_balance(scipy.sparse.csc_matrix(A))


def _solve_balance(A) -> np.ndarray:
    """Null vector of ``A`` (columns summing to zero), normalised to a law.

    One balance equation is redundant, so we pin ``pi[0] = 1`` and drop the
    first equation; unlike replacing a row with ones this adds no dense row
    and keeps the LU fill-in small.
    """
    n = A.shape[0]
    if n == 1:
        return np.ones(1)
    sub = A[1:, 1:].tocsc()
    rhs = -A[1:, 0].toarray().ravel()
    try:
        with np.errstate(all="ignore"):
            tail = scipy.sparse.linalg.splu(sub, permc_spec="MMD_AT_PLUS_A").solve(rhs)
    except RuntimeError:
        raise StateSpaceError("singular truncated generator") from None
    pi = np.concatenate([[1.0], tail])
    if not np.all(np.isfinite(pi)):
        raise StateSpaceError("singular truncated generator")
    pi = np.where(pi < 0, 0.0, pi)
    return pi / pi.sum()


def uniformize(Q, q_bar: float):
    """``P = I + Q / q_bar``; requires ``q_bar`` at least the largest outflow."""
    Q = scipy.sparse.csr_matrix(Q)
    out = -Q.diagonal()
    if q_bar < out.max() * (1 - 1e-12):
        raise ValueError("uniform rate below the largest outflow rate")
    off = Q - scipy.sparse.diags(Q.diagonal())
    P = off / q_bar + scipy.sparse.diags(1.0 - out / q_bar)
    return P.tocsr()


@dataclass
class ExactStationary:
    epsilon: float
    states: np.ndarray
    probabilities: np.ndarray
    cap: int
    boundary_mass: float
    mean_weighted_flows: float
    mean_total_flows: float
    mean_unused: np.ndarray
    mean_perp_norm: float = float("nan")
    mean_perp_norm_sq: float = float("nan")
    mean_norm: float = float("nan")
    truncation_error: float = 0.0

    def expect(self, f) -> float:
        return float(sum(p * f(s) for s, p in zip(self.states, self.probabilities)))


def exact_stationary(spec: NetworkSpec, dists, profile: TrafficProfile, cap: int,
                     geometry: GeometryContext | None = None, lam=None) -> ExactStationary:
    """Stationary law of the chain killed at ``sum(n) = cap``, renormalised.

    ``truncation_error`` is the crude bound ``boundary_mass * cap * max(kappa)``
    on the missing weighted-flow mass; ``boundary_mass`` is the probability of
    the states on the cap and is the primary adequacy diagnostic.
    """
    chain = Chain(spec, dists, profile, lam)
    states, Q, _ = truncated_generator(chain, cap)
    pi = stationary_from_generator(Q)
    tot = states.sum(axis=1)
    boundary = float(pi[tot == cap].sum())
    route_tot = np.stack([states[:, chain.offsets[r]:chain.offsets[r + 1]].sum(axis=1)
                          for r in range(chain.R)], axis=1)
    weighted = route_tot @ chain.kappa
    unused = np.array([chain.allocation(tuple(int(v) for v in rt)).U for rt in route_tot])
    est = ExactStationary(
        epsilon=float(profile.epsilon), states=states, probabilities=pi, cap=cap, boundary_mass=boundary,
        mean_weighted_flows=float(pi @ weighted), mean_total_flows=float(pi @ tot),
        mean_unused=pi @ unused,
        truncation_error=boundary * cap * float(chain.kappa.max()),
    )
    if geometry is not None:
        perp = np.array([project_cone(geometry, s).distance for s in states])
        norms = np.linalg.norm(states @ geometry.M.chol.T, axis=1)
        est.mean_perp_norm = float(pi @ perp)
        est.mean_perp_norm_sq = float(pi @ perp**2)
        est.mean_norm = float(pi @ norms)
    return est


def uniformize_check(spec: NetworkSpec, dists, profile: TrafficProfile, cap: int,
                     q_factor: float = 1.0, lam=None) -> dict:
    """Compare the CTMC stationary law with that of its uniformised DTMC."""
    if q_factor < 1:
        raise ValueError("q_factor must be at least 1")
    chain = Chain(spec, dists, profile, lam)
    _, Q, out = truncated_generator(chain, cap)
    pi_c = stationary_from_generator(Q)
    q_bar = q_factor * float(out.max())
    pi_d = stationary_from_dtmc(uniformize(Q, q_bar))
    return {"q_bar": q_bar, "states": int(Q.shape[0]),
            "tv_distance": 0.5 * float(np.abs(pi_c - pi_d).sum()),
            "ctmc": pi_c, "dtmc": pi_d}


# ----------------------------------------------------------------------------
# event-driven simulation

@dataclass
class SimulationEstimate:
    epsilon: float
    replication: int
    seed: int
    events: int
    sim_time: float
    mean_weighted_flows: float
    se_weighted_flows: float
    mean_total_flows: float
    se_total_flows: float
    mean_perp_norm: float
    se_perp_norm: float
    mean_perp_norm_sq: float
    mean_norm: float
    se_norm: float
    collapse_ratio: float
    se_collapse_ratio: float
    mean_unused: np.ndarray
    se_unused: np.ndarray
    batches: int
    batch_weighted: np.ndarray = field(repr=False, default=None)


def _batch_stats(values, times):
    means = values / times
    mean = float(values.sum() / times.sum())
    se = float(np.std(means, ddof=1) / math.sqrt(len(means))) if len(means) > 1 else float("nan")
    return mean, se, means


def simulate(spec: NetworkSpec, dists, profile: TrafficProfile, geometry: GeometryContext | None,
             events: int, warmup_fraction: float = 0.2, seed: int = 0,
             replication: int = 0, batches: int = 32, lam=None) -> SimulationEstimate:
    """Simulate ``events`` transitions from the empty state.

    Statistics are exact time averages over the post-warmup trajectory: the
    occupation time of every visited state is recorded and functionals
    (weighted flow count, unused bandwidth, cone distance, norm) are evaluated
    once per distinct state.  Standard errors come from ``batches``
    non-overlapping batch means of equal event counts.
    """
    if events < 10**4:
        raise ValueError("horizon_events must be at least 1e4")
    if not 0.0 <= warmup_fraction <= 0.5:
        raise ValueError("warmup_fraction must lie in [0, 0.5]")
    chain = Chain(spec, dists, profile, lam)
    rng = make_rng(seed, replication)
    K, R = chain.K, chain.R
    offsets = chain.offsets
    rates = chain.rates
    nxt = chain.next
    route_of = chain.route_of
    arr_phases = [k for k in range(K) if chain.arrival[k] > 0]
    arr_cum = list(np.cumsum([chain.arrival[k] for k in arr_phases]))
    lam_tot = arr_cum[-1] if arr_cum else 0.0
    n_arr = len(arr_phases)

    n = [0] * K
    nt = [0] * R
    wr = [0.0] * R
    x = list(chain.allocation(tuple(nt)).x)

    warm = int(events * warmup_fraction)
    post = events - warm
    per_batch = post // batches
    bounds = [warm + per_batch * (b + 1) for b in range(batches)]
    bounds[-1] = events
    occ_batches = []
    occ = {}
    batch_end = warm
    b_idx = -1
    t_total = 0.0

    chunk = 1 << 16
    ex = uni = None
    pos = chunk
    for ev in range(events):
        if ev == batch_end:
            occ = {}
            occ_batches.append(occ)
            b_idx += 1
            batch_end = bounds[b_idx]
        if pos == chunk:
            ex = rng.standard_exponential(chunk).tolist()
            uni = rng.random(chunk).tolist()
            pos = 0
        serv = 0.0
        for r in range(R):
            serv += x[r] * wr[r]
        tot = lam_tot + serv
        if tot <= 0:
            raise SimulationError("no enabled transition", state=tuple(n))
        dt = ex[pos] / tot
        u = uni[pos] * tot
        pos += 1
        if ev >= warm:
            key = tuple(n)
            occ[key] = occ.get(key, 0.0) + dt
            t_total += dt
        if u < lam_tot:
            i = bisect.bisect_right(arr_cum, u)
            k = arr_phases[i if i < n_arr else n_arr - 1]
            n[k] += 1
            r = route_of[k]
            nt[r] += 1
        else:
            u -= lam_tot
            r_sel = -1
            for r in range(R):
                s = x[r] * wr[r]
                if s > 0:
                    r_sel = r
                    if u < s:
                        break
                    u -= s
            r = r_sel
            v = u / x[r]
            k_sel = -1
            for k in range(offsets[r], offsets[r + 1]):
                if n[k]:
                    k_sel = k
                    c = n[k] * rates[k]
                    if v < c:
                        break
                    v -= c
            k = k_sel
            n[k] -= 1
            j = nxt[k]
            if j >= 0:
                n[j] += 1
            else:
                nt[r] -= 1
        s = 0.0
        for kk in range(offsets[r], offsets[r + 1]):
            s += n[kk] * rates[kk]
        wr[r] = s
        x = chain.allocation(tuple(nt)).x

    return _summarise(chain, geometry, occ_batches, profile, seed, replication, events, t_total)


def _summarise(chain: Chain, geometry, occ_batches, profile, seed, replication, events, t_total):
    states = {}
    for occ in occ_batches:
        for key in occ:
            if key not in states:
                states[key] = len(states)
    keys = list(states)
    arr = np.array(keys, dtype=float)
    route_tot = np.stack([arr[:, chain.offsets[r]:chain.offsets[r + 1]].sum(axis=1)
                          for r in range(chain.R)], axis=1)
    weighted = route_tot @ chain.kappa
    total = arr.sum(axis=1)
    unused = np.array([chain.allocation(tuple(int(v) for v in rt)).U for rt in route_tot])
    if geometry is not None:
        perp = np.array([project_cone(geometry, s).distance for s in arr])
        norms = np.linalg.norm(arr @ geometry.M.chol.T, axis=1)
    else:
        perp = norms = np.full(len(keys), np.nan)

    B = len(occ_batches)
    times = np.empty(B)
    sums = np.zeros((B, 5 + chain.L))
    funcs = np.column_stack([weighted, total, perp, perp**2, norms, unused])
    for b, occ in enumerate(occ_batches):
        idx = np.fromiter((states[k] for k in occ), dtype=np.int64, count=len(occ))
        w = np.fromiter(occ.values(), dtype=float, count=len(occ))
        times[b] = w.sum()
        sums[b] = w @ funcs[idx]
    mw, sew, bw = _batch_stats(sums[:, 0], times)
    mt, set_, _ = _batch_stats(sums[:, 1], times)
    mp, sep, bp = _batch_stats(sums[:, 2], times)
    mp2, _, _ = _batch_stats(sums[:, 3], times)
    mn, sen, bn = _batch_stats(sums[:, 4], times)
    ratios = bp / bn
    ratio = mp / mn if mn > 0 else float("nan")
    se_ratio = float(np.std(ratios, ddof=1) / math.sqrt(B)) if B > 1 else float("nan")
    mu_ = sums[:, 5:].sum(axis=0) / times.sum()
    bu = sums[:, 5:] / times[:, None]
    seu = np.std(bu, axis=0, ddof=1) / math.sqrt(B) if B > 1 else np.full(chain.L, np.nan)
    return SimulationEstimate(
        epsilon=float(profile.epsilon), replication=int(replication), seed=int(seed),
        events=int(events), sim_time=float(t_total),
        mean_weighted_flows=mw, se_weighted_flows=sew,
        mean_total_flows=mt, se_total_flows=set_,
        mean_perp_norm=mp, se_perp_norm=sep, mean_perp_norm_sq=mp2,
        mean_norm=mn, se_norm=sen, collapse_ratio=ratio, se_collapse_ratio=se_ratio,
        mean_unused=mu_, se_unused=seu, batches=B, batch_weighted=bw,
    )
