"""Class-D phase-type file-size distributions.

A class-D distribution is the absorption time of a Markov chain whose
sub-generator ``S`` is block diagonal.  Each block is an upper-bidiagonal
Erlang chain with a single rate (``-mu`` on the diagonal, ``+mu`` above it),
the block rates are pairwise distinct, and the initial law puts positive mass
on the first phase of every block.  Finite mixtures of Erlang distributions
are the special case with zero mass on all non-head phases.

Because every block is ``mu * (N - I)`` with ``N`` nilpotent, the matrix
exponential has the exact finite expansion

.. math:: e^{S_b t} = e^{-\\mu t} \\sum_{q < m} (\\mu t N)^q / q!,

which is what :func:`expm` evaluates.  There is no truncation and every entry
keeps full relative accuracy even deep in the tail, where a generic
scaling-and-squaring scheme only controls absolute error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DistributionError

RATE_SEP_TOL = 1e-6
PROB_TOL = 1e-12


@dataclass(frozen=True)
class Block:
    rate: float
    phases: int


@dataclass(frozen=True, eq=False)
class PhaseTypeDist:
    """Validated class-D distribution; build it with :func:`build_class_d`."""

    blocks: tuple[Block, ...]
    initial: np.ndarray
    S: np.ndarray = field(repr=False)

    @property
    def n_phases(self) -> int:
        return len(self.initial)

    @property
    def phase_rates(self) -> np.ndarray:
        """Total outflow rate ``-S[k, k]`` of every phase."""
        return np.concatenate([np.full(b.phases, b.rate) for b in self.blocks])

    @property
    def next_phase(self) -> np.ndarray:
        """Successor phase index of every phase, ``-1`` for exit phases."""
        out = []
        start = 0
        for b in self.blocks:
            out.extend(range(start + 1, start + b.phases))
            out.append(-1)
            start += b.phases
        return np.asarray(out, dtype=int)

    @property
    def exit_rates(self) -> np.ndarray:
        """Absorption rate vector ``s = -S 1``."""
        return -self.S.sum(axis=1)

    @property
    def block_heads(self) -> np.ndarray:
        starts = np.cumsum([0] + [b.phases for b in self.blocks[:-1]])
        return starts.astype(int)

    @property
    def min_rate(self) -> float:
        return min(b.rate for b in self.blocks)

    @property
    def mean(self) -> float:
        return float(self.initial @ np.linalg.solve(-self.S, np.ones(self.n_phases)))

    def __eq__(self, other):
        if not isinstance(other, PhaseTypeDist):
            return NotImplemented
        return self.blocks == other.blocks and np.array_equal(self.initial, other.initial)

    def __hash__(self):
        return hash((self.blocks, self.initial.tobytes()))


def class_d_generator(blocks) -> np.ndarray:
    """Assemble the block-diagonal, block-bidiagonal sub-generator."""
    K = sum(b.phases for b in blocks)
    S = np.zeros((K, K))
    start = 0
    for b in blocks:
        for i in range(b.phases):
            S[start + i, start + i] = -b.rate
            if i + 1 < b.phases:
                S[start + i, start + i + 1] = b.rate
        start += b.phases
    return S


def build_class_d(blocks, initial) -> PhaseTypeDist:
    """Validate ``blocks`` (``(rate, phases)`` pairs) and the initial law.

    Raises :class:`DistributionError` with one of the messages
    ``"nondistinct rates"``, ``"initial mass zero on block head"`` or
    ``"π not a distribution"``.
    """
    parsed = []
    for i, blk in enumerate(blocks):
        if isinstance(blk, Block):
            rate, phases = blk.rate, blk.phases
        elif isinstance(blk, dict):
            rate, phases = blk["rate"], blk["phases"]
        else:
            rate, phases = blk
        rate = float(rate)
        if not (math.isfinite(rate) and rate > 0):
            raise DistributionError(f"block {i}: rate must be positive, got {rate}")
        if int(phases) != phases or phases < 1:
            raise DistributionError(f"block {i}: phase count must be a positive integer")
        parsed.append(Block(rate, int(phases)))
    if not parsed:
        raise DistributionError("distribution needs at least one block")

    rates = [b.rate for b in parsed]
    for a in range(len(rates)):
        for b in range(a + 1, len(rates)):
            if abs(rates[a] - rates[b]) <= RATE_SEP_TOL * max(rates[a], rates[b]):
                raise DistributionError("nondistinct rates")

    pi = np.asarray(initial, dtype=float).ravel()
    K = sum(b.phases for b in parsed)
    if pi.shape != (K,) or np.any(~np.isfinite(pi)) or np.any(pi < 0) \
            or abs(pi.sum() - 1.0) > PROB_TOL * K:
        raise DistributionError("π not a distribution")
    head = 0
    for b in parsed:
        if pi[head] <= 0:
            raise DistributionError("initial mass zero on block head")
        head += b.phases
    pi = pi / pi.sum()
    pi.setflags(write=False)
    S = class_d_generator(parsed)
    S.setflags(write=False)
    return PhaseTypeDist(tuple(parsed), pi, S)


def exponential(rate) -> PhaseTypeDist:
    return build_class_d([(rate, 1)], [1.0])


def erlang(phases, rate) -> PhaseTypeDist:
    init = np.zeros(phases)
    init[0] = 1.0
    return build_class_d([(rate, phases)], init)


def hyperexponential(rates, probs) -> PhaseTypeDist:
    return build_class_d([(r, 1) for r in rates], probs)


def expm(dist: PhaseTypeDist, t) -> np.ndarray:
    """``exp(S t)`` for scalar or array ``t`` (stacked along axis 0)."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    K = dist.n_phases
    out = np.zeros((t.size, K, K))
    start = 0
    for b in dist.blocks:
        mt = b.rate * t
        decay = np.exp(-mt)
        term = decay.copy()
        for q in range(b.phases):
            for i in range(b.phases - q):
                out[:, start + i, start + i + q] = term
            term = term * mt / (q + 1)
        start += b.phases
    return out[0] if scalar else out


def expm_ones(dist: PhaseTypeDist, t) -> np.ndarray:
    """``exp(S t) 1`` with shape ``(len(t), K)``: per-phase residual survival."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((t.size, dist.n_phases))
    start = 0
    for b in dist.blocks:
        mt = b.rate * t
        decay = np.exp(-mt)
        # phase i of the block still has (phases - i) stages to go
        partial = np.zeros_like(mt)
        term = np.ones_like(mt)
        cums = []
        for q in range(b.phases):
            partial = partial + term
            cums.append(partial.copy())
            term = term * mt / (q + 1)
        for i in range(b.phases):
            out[:, start + i] = decay * cums[b.phases - 1 - i]
        start += b.phases
    return out


def moments_and_loads(dist: PhaseTypeDist, lam: float):
    """Return ``(mean, load_vector, route_load)`` for arrival rate ``lam``.

    ``load_vector[k] = lam * ((-S)^{-T} pi^T)[k]`` is the load carried by
    phase ``k``; its entries sum to ``route_load = lam * mean``.
    """
    if lam < 0:
        raise ValueError("arrival rate must be nonnegative")
    mean = dist.mean
    load = lam * np.linalg.solve(-dist.S.T, dist.initial)
    return mean, load, lam * mean


@dataclass(frozen=True)
class HazardBound:
    eta: float
    grid_min_u: float
    grid_min_value: float
    asymptotic_floor: float
    flagged: bool


@dataclass(frozen=True)
class SurvivalHazard:
    u: np.ndarray
    survival: np.ndarray
    density: np.ndarray
    bound: HazardBound

    @property
    def hazard(self) -> np.ndarray:
        return self.density / self.survival


def survival(dist: PhaseTypeDist, u) -> np.ndarray:
    return expm_ones(dist, u) @ dist.initial


def density(dist: PhaseTypeDist, u) -> np.ndarray:
    # (-S) exp(Su) 1 = exp(Su) (-S 1); both factors are entrywise nonnegative
    E = expm(dist, np.atleast_1d(u))
    return (dist.initial @ E) @ dist.exit_rates


def survival_and_hazard(dist: PhaseTypeDist, u_max=None, grid: int = 2000,
                        flag_tol: float = 1e-12) -> SurvivalHazard:
    """Sample ``G`` and ``g`` and bound the hazard ``g / G`` from below.

    The probe set is ``u = 0`` followed by a geometric grid of ``grid`` points
    on ``(0, u_max]``.  ``eta`` is half the smaller of the grid minimum and the
    asymptotic floor (the slowest block rate); it is zeroed and flagged when
    the hazard is not bounded away from zero on the probes.
    """
    if grid < 2:
        raise ValueError("grid needs at least two points")
    floor = dist.min_rate
    if u_max is None:
        u_max = 40.0 / floor
    if u_max <= 0:
        raise ValueError("u_max must be positive")
    u = np.concatenate([[0.0], np.geomspace(u_max * 1e-6, u_max, grid)])
    E = expm(dist, u)
    piE = dist.initial @ E
    G = piE.sum(axis=1)
    g = piE @ dist.exit_rates
    h = g / G
    i = int(np.argmin(h))
    hmin = float(h[i])
    flagged = hmin <= flag_tol * floor
    eta = 0.0 if flagged else 0.5 * min(hmin, floor)
    return SurvivalHazard(u, G, g, HazardBound(eta, float(u[i]), hmin, floor, flagged))


def sample(dist: PhaseTypeDist, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw absorption times by walking the phase chain one phase at a time."""
    phase = rng.choice(dist.n_phases, size=size, p=dist.initial)
    rates = dist.phase_rates
    nxt = dist.next_phase
    t = np.zeros(size)
    alive = np.ones(size, dtype=bool)
    while alive.any():
        idx = np.flatnonzero(alive)
        t[idx] += rng.standard_exponential(idx.size) / rates[phase[idx]]
        phase[idx] = nxt[phase[idx]]
        alive[idx] = phase[idx] >= 0
    return t


def filesize_from_config(obj, path="filesize") -> PhaseTypeDist:
    """Build a distribution from its JSON object form.

    ``{"type": "exponential", "rate": mu}`` is sugar for one single-phase
    block; ``{"type": "class_d", "blocks": [{"rate", "phases"}], "initial": [...]}``
    is the general form.
    """
    from .errors import ConfigError

    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    kind = obj.get("type")
    if kind == "exponential":
        _reject_unknown(obj, {"type", "rate"}, path)
        if "rate" not in obj:
            raise ConfigError(f"{path}.rate", "missing")
        try:
            return exponential(obj["rate"])
        except (DistributionError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.rate", str(exc)) from None
    if kind == "class_d":
        _reject_unknown(obj, {"type", "blocks", "initial"}, path)
        for key in ("blocks", "initial"):
            if key not in obj:
                raise ConfigError(f"{path}.{key}", "missing")
        blocks = obj["blocks"]
        if not isinstance(blocks, list) or not blocks:
            raise ConfigError(f"{path}.blocks", "expected a nonempty array")
        parsed = []
        for i, b in enumerate(blocks):
            bp = f"{path}.blocks[{i}]"
            if not isinstance(b, dict):
                raise ConfigError(bp, "expected an object")
            _reject_unknown(b, {"rate", "phases"}, bp)
            for key in ("rate", "phases"):
                if key not in b:
                    raise ConfigError(f"{bp}.{key}", "missing")
            if not _is_number(b["rate"]) or b["rate"] <= 0:
                raise ConfigError(f"{bp}.rate", "must be a positive number")
            if not isinstance(b["phases"], int) or isinstance(b["phases"], bool) \
                    or b["phases"] < 1:
                raise ConfigError(f"{bp}.phases", "must be a positive integer")
            parsed.append((b["rate"], b["phases"]))
        init = obj["initial"]
        if not isinstance(init, list) or not all(_is_number(v) for v in init):
            raise ConfigError(f"{path}.initial", "expected an array of numbers")
        try:
            return build_class_d(parsed, init)
        except DistributionError as exc:
            raise ConfigError(path, str(exc)) from None
    raise ConfigError(f"{path}.type", f"unknown filesize type {kind!r}")


def filesize_to_config(dist: PhaseTypeDist) -> dict:
    if len(dist.blocks) == 1 and dist.blocks[0].phases == 1:
        return {"type": "exponential", "rate": dist.blocks[0].rate}
    return {
        "type": "class_d",
        "blocks": [{"rate": b.rate, "phases": b.phases} for b in dist.blocks],
        "initial": [float(v) for v in dist.initial],
    }


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _reject_unknown(obj, allowed, path):
    from .errors import ConfigError

    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")
