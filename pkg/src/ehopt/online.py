"""Finite-horizon dynamic programming for causal channel/energy knowledge.

Battery bookkeeping: ``b`` is the stored energy (in grid steps) at the start
of a communication block *before* that block's harvest.  The block's harvest
``inc`` is usable immediately, the action is a power level ``p <= b + inc``
and the next block starts from ``b + inc - p``.  EH rates are observed at
EH-block starts, gains at communication-block starts.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .fading import OutageFn
from .model import (
    DEFAULT_TOL,
    ConfigError,
    EhProfile,
    PowerSchedule,
    NonOutage,
    Throughput,
    UtilitySpec,
    energy_slack,
    served,
)

_PROB_TOL = 1e-12


def _probs(p, n: int, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"{what}: expected {n} probabilities, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > _PROB_TOL:
        raise ValueError(f"{what}: probabilities must be non-negative and sum to 1")
    return p


def _grid(v, what: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 0:
        raise ConfigError(f"{what}: empty support")
    if np.any(v < 0) or np.any(np.diff(v) <= 0):
        raise ValueError(f"{what}: support must be non-negative and strictly increasing")
    return v


@dataclass(frozen=True)
class IIDRates:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = _grid(self.values, "EH rates")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", _probs(self.probs, v.size, "EH rates"))


@dataclass(frozen=True)
class MarkovRates:
    values: np.ndarray
    matrix: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        v = _grid(self.values, "EH rates")
        mat = np.asarray(self.matrix, dtype=float)
        if mat.shape != (v.size, v.size):
            raise ValueError("transition matrix shape does not match the rate grid")
        for row in mat:
            _probs(row, v.size, "transition row")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "initial", _probs(self.initial, v.size, "initial EH state"))


@dataclass(frozen=True)
class FixedRates:
    """Known EH sequence (non-causal ESIT)."""

    rates: np.ndarray

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if r.size == 0 or np.any(r < 0):
            raise ValueError("fixed EH rates must be non-empty and non-negative")
        object.__setattr__(self, "rates", r)


EhProcess = Union[IIDRates, MarkovRates, FixedRates]


@dataclass(frozen=True)
class GainProcess:
    """I.i.d. channel gains on a finite support."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = _grid(self.values, "gains")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", _probs(self.probs, v.size, "gains"))

    @classmethod
    def constant(cls, gain: float = 1.0) -> "GainProcess":
        return cls([gain], [1.0])


@dataclass(frozen=True)
class StochasticModel:
    eh: EhProcess
    channel: Optional[GainProcess]
    num_eh_blocks: int
    blocks_per_eh: int = 1

    def __post_init__(self):
        if self.num_eh_blocks < 1 or self.blocks_per_eh < 1:
            raise ValueError("horizon must be at least one block")
        if isinstance(self.eh, FixedRates) and self.eh.rates.size != self.num_eh_blocks:
            raise ValueError("fixed EH sequence length differs from the number of EH blocks")

    @classmethod
    def deterministic(cls, profile: EhProfile, gain: float | None = 1.0) -> "StochasticModel":
        ch = None if gain is None else GainProcess.constant(gain)
        return cls(FixedRates(profile.rates), ch, profile.num_eh_blocks, profile.N)

    @property
    def M(self) -> int:
        return self.num_eh_blocks

    @property
    def N(self) -> int:
        return self.blocks_per_eh

    @property
    def horizon(self) -> int:
        return self.num_eh_blocks * self.blocks_per_eh

    def with_fixed_rates(self, rates) -> "StochasticModel":
        return StochasticModel(FixedRates(rates), self.channel, self.M, self.N)

    def eh_chain(self):
        """(values[m, e], initial[e], transitions[m] from block m to m + 1)."""
        M = self.M
        eh = self.eh
        if isinstance(eh, FixedRates):
            values = eh.rates[:, None]
            init = np.ones(1)
            trans = np.ones((max(M - 1, 0), 1, 1))
        elif isinstance(eh, IIDRates):
            values = np.tile(eh.values, (M, 1))
            init = eh.probs
            trans = np.tile(eh.probs, (max(M - 1, 0), eh.values.size, 1))
        else:
            values = np.tile(eh.values, (M, 1))
            init = eh.initial
            trans = np.tile(eh.matrix, (max(M - 1, 0), 1, 1))
        return values, init, trans

    def max_total_harvest(self) -> float:
        values, _, _ = self.eh_chain()
        return float(self.N * values.max(axis=1).sum())


@dataclass(frozen=True)
class BatteryGrid:
    """Battery and action grid: levels 0, step, ..., (levels - 1) * step."""

    step: float
    levels: int

    def __post_init__(self):
        if not self.step > 0 or self.levels < 1:
            raise ConfigError("battery grid needs a positive step and at least one level")

    def index(self, energy, what: str = "energy") -> np.ndarray:
        x = np.asarray(energy, dtype=float) / self.step
        k = np.rint(x)
        if np.any(np.abs(x - k) > 1e-9 * np.maximum(1.0, np.abs(x))):
            raise ConfigError(f"{what} is not a multiple of the battery step {self.step}")
        return k.astype(np.int64)

    def refine(self, factor: int = 2) -> "BatteryGrid":
        return BatteryGrid(self.step / factor, (self.levels - 1) * factor + 1)

    @property
    def values(self) -> np.ndarray:
        return self.step * np.arange(self.levels)


def _rational_gcd(values) -> Fraction:
    g = Fraction(0)
    for v in values:
        f = Fraction(float(v)).limit_denominator(10 ** 6)
        if f:
            g = Fraction(math.gcd(g.numerator * f.denominator, f.numerator * g.denominator),
                         g.denominator * f.denominator) if g else f
    return g


def default_grid(model: StochasticModel, points: int = 201,
                 initial_battery: float = 0.0) -> BatteryGrid:
    """About ``points`` levels over [0, total max harvest] with every harvest on-grid."""
    values, _, _ = model.eh_chain()
    total = model.max_total_harvest() + initial_battery
    if total <= 0:
        return BatteryGrid(1.0, 1)
    base = _rational_gcd(list(values.ravel()) + [initial_battery])
    span = total / float(base)
    factor = max(1, int(round((points - 1) / span))) if span < points - 1 else 1
    step = float(base) / factor
    return BatteryGrid(step, int(round(total / step)) + 1)


def _utility_table(spec: UtilitySpec, gains: np.ndarray, grid: BatteryGrid) -> np.ndarray:
    power = grid.values
    if isinstance(spec, Throughput):
        return np.log2(1.0 + np.outer(gains, power))
    if isinstance(spec, NonOutage) and spec.fading is None:
        return served(gains[:, None], power[None, :], spec.rate).astype(float)
    raise ConfigError("per-block DP needs a throughput or known-CSIT outage utility")


@dataclass(frozen=True)
class DpPolicy:
    """Greedy policy over a solved value table.

    Per-block policies (cases 2 and 3) index ``actions``/``values`` by
    ``[t, b, g, e]``; per-EH-block policies (case 4) store ``actions`` as
    ``[m, b, e, n]`` and ``values`` as ``[m, b, e]``.
    """

    kind: str
    actions: np.ndarray
    values: np.ndarray
    grid: BatteryGrid
    model: StochasticModel
    increments: np.ndarray
    expected_value: float
    initial_level: int = 0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def act(self, t: int, b: int, g: int, e: int) -> int:
        return int(self.actions[t, b, g, e])


@dataclass(frozen=True)
class MyopicPolicy:
    """Spend everything available in every block."""

    grid: BatteryGrid
    model: StochasticModel
    increments: np.ndarray
    kind: str = "block"
    initial_level: int = 0

    @classmethod
    def for_model(cls, model: StochasticModel, grid: BatteryGrid | None = None,
                  initial_battery: float = 0.0) -> "MyopicPolicy":
        grid = grid or default_grid(model, initial_battery=initial_battery)
        values, _, _ = model.eh_chain()
        return cls(grid, model, grid.index(values, "EH rate"),
                   initial_level=int(grid.index(initial_battery)))

    def act(self, t: int, b: int, g: int, e: int) -> int:
        m = t // self.model.N
        return min(b + int(self.increments[m, e]), self.grid.levels - 1)


def _check_grid(model: StochasticModel, grid: BatteryGrid, initial_level: int) -> np.ndarray:
    values, _, _ = model.eh_chain()
    inc = grid.index(values, "EH rate")
    need = initial_level + model.N * int(inc.max(axis=1).sum())
    if need > grid.levels - 1:
        raise ConfigError(f"battery grid tops out at level {grid.levels - 1}, needs {need}")
    return inc


def _solve_block_dp(model: StochasticModel, spec: UtilitySpec, grid: BatteryGrid | None,
                    initial_battery: float, backend: str | None) -> DpPolicy:
    if model.channel is None:
        raise ConfigError("per-block DP needs a channel gain process")
    grid = grid or default_grid(model, initial_battery=initial_battery)
    b0 = int(grid.index(initial_battery, "initial battery"))
    inc = _check_grid(model, grid, b0)
    _, init, trans = model.eh_chain()
    gp = model.channel.probs
    util = _utility_table(spec, model.channel.values, grid)
    M, N, L = model.M, model.N, grid.levels
    G, E = gp.size, init.size
    T = M * N
    V = np.zeros((T + 1, L, G, E))
    A = np.zeros((T, L, G, E), dtype=np.int64)
    b = np.arange(L)
    for t in range(T - 1, -1, -1):
        m, n = divmod(t, N)
        nxt = np.einsum("lge,g->le", V[t + 1], gp)  # average over the next gain
        if t == T - 1 or n + 1 < N:
            W = nxt
        else:
            W = nxt @ trans[m].T  # W[c, e] = sum_e' P(e -> e') nxt[c, e']
        for e in range(E):
            avail = np.minimum(b + inc[m, e], L - 1)
            for g in range(G):
                Z, arg = kernels.maxplus_conv(util[g], W[:, e], L, backend=backend)
                V[t, :, g, e] = Z[avail]
                A[t, :, g, e] = arg[avail]
    value = float(np.einsum("e,g,ge->", init, gp, V[0, b0]))
    kind = "case3" if isinstance(model.eh, FixedRates) else "case2"
    return DpPolicy(kind, A, V, grid, model, inc, value, initial_level=b0)


def solve_dp_case2(model: StochasticModel, spec: UtilitySpec, grid: BatteryGrid | None = None,
                   initial_battery: float = 0.0, backend: str | None = None) -> DpPolicy:
    """Backward induction with causal CSI and ESI."""
    return _solve_block_dp(model, spec, grid, initial_battery, backend)


def solve_dp_case3(profile: EhProfile, channel: GainProcess, spec: UtilitySpec,
                   grid: BatteryGrid | None = None, initial_battery: float = 0.0,
                   backend: str | None = None) -> DpPolicy:
    """Backward induction with the EH sequence known in advance."""
    model = StochasticModel(FixedRates(profile.rates), channel, profile.num_eh_blocks, profile.N)
    return _solve_block_dp(model, spec, grid, initial_battery, backend)


# Case 4, causal ESIT: one N-vector per EH block -------------------------------


def _inner_dp(success: np.ndarray, b: int, inc: int, N: int, L: int, backend):
    """Best expected successes for every within-block total spend S.

    Exhaustive over all grid vectors obeying b + n * inc caps.
    """
    G = np.full(L, -np.inf)
    G[0] = 0.0
    args = np.zeros((N, L), dtype=np.int64)
    idx = np.arange(L)
    for n in range(N):
        G, arg = kernels.maxplus_conv(success, G, L, backend=backend)
        G[idx > b + (n + 1) * inc] = -np.inf
        args[n] = arg
    return G, args


def _inner_enumerate(success: np.ndarray, b: int, inc: int, N: int, L: int):
    """Same quantity by explicit enumeration of non-decreasing vectors."""
    G = np.full(L, -np.inf)
    best = {}
    top = min(b + N * inc, L - 1)
    for vec in itertools.combinations_with_replacement(range(top + 1), N):
        c = np.cumsum(vec)
        if c[-1] > top or np.any(c > b + inc * np.arange(1, N + 1)):
            continue
        val = float(success[list(vec)].sum())
        S = int(c[-1])
        if val > G[S]:
            G[S] = val
            best[S] = vec
    return G, best


def _backtrack(args: np.ndarray, S: int) -> np.ndarray:
    N = args.shape[0]
    vec = np.zeros(N, dtype=np.int64)
    c = S
    for n in range(N - 1, -1, -1):
        vec[n] = args[n, c]
        c -= vec[n]
    return vec


def solve_dp_outage_case4_causal(model: StochasticModel, ofn: OutageFn,
                                 grid: BatteryGrid | None = None, initial_battery: float = 0.0,
                                 inner: str = "dp", backend: str | None = None) -> DpPolicy:
    """Expected non-outage maximization without CSIT, deciding N powers per EH block.

    ``inner="dp"`` searches all within-block grid vectors by a forward DP;
    ``inner="enumerate"`` lists non-decreasing vectors explicitly (small N
    only) and must give the same values since the objective is symmetric.
    """
    if inner not in ("dp", "enumerate"):
        raise ValueError(f"unknown inner search {inner!r}")
    grid = grid or default_grid(model, initial_battery=initial_battery)
    b0 = int(grid.index(initial_battery, "initial battery"))
    inc = _check_grid(model, grid, b0)
    _, init, trans = model.eh_chain()
    M, N, L = model.M, model.N, grid.levels
    E = init.size
    success = np.asarray(ofn.success_prob(grid.values), dtype=float)
    V = np.zeros((M + 1, L, E))
    A = np.zeros((M, L, E, N), dtype=np.int64)
    cache: dict[int, tuple] = {}
    for m in range(M - 1, -1, -1):
        W = V[m + 1] if m == M - 1 else V[m + 1] @ trans[m].T
        for e in range(E):
            v = int(inc[m, e])
            if v not in cache:
                rows = []
                for b in range(L):
                    if inner == "dp":
                        rows.append(_inner_dp(success, b, v, N, L, backend))
                    else:
                        rows.append(_inner_enumerate(success, b, v, N, L))
                cache[v] = rows
            rows = cache[v]
            for b in range(L):
                F, how = rows[b]
                top = min(b + N * v, L - 1)
                S = np.arange(top + 1)
                vals = F[: top + 1] + W[top - S, e]
                k = int(np.argmax(vals))
                V[m, b, e] = vals[k]
                A[m, b, e] = _backtrack(how, k) if inner == "dp" else np.asarray(how[k])
    value = float(init @ V[0, b0])
    return DpPolicy("case4", A, V, grid, model, inc, value, initial_level=b0,
                    extra={"success": success})


# Rollouts ---------------------------------------------------------------------


@dataclass(frozen=True)
class Rollout:
    powers: np.ndarray      # (M, N)
    gains: np.ndarray       # (M, N)
    rates: np.ndarray       # (M,)
    utility: float


def block_utility(spec: UtilitySpec, gain: float, power: float) -> float:
    if isinstance(spec, Throughput):
        return math.log2(1.0 + gain * power)
    if isinstance(spec, NonOutage) and spec.fading is None:
        return float(served(gain, power, spec.rate))
    raise ConfigError(f"cannot score {spec!r} per block")


def rollout(policy, spec: UtilitySpec, eh_idx: Sequence[int], gain_idx: np.ndarray,
            ofn: OutageFn | None = None) -> Rollout:
    """Run ``policy`` on one realized trace given as support indices."""
    model = policy.model
    grid = policy.grid
    values, _, _ = model.eh_chain()
    M, N = model.M, model.N
    gain_idx = np.asarray(gain_idx).reshape(M, N)
    gvals = model.channel.values if model.channel is not None else np.ones(1)
    powers = np.zeros((M, N))
    rates = np.array([values[m, eh_idx[m]] for m in range(M)])
    b = policy.initial_level
    total = 0.0
    for m in range(M):
        e = int(eh_idx[m])
        inc = int(policy.increments[m, e])
        if policy.kind == "case4":
            vec = policy.actions[m, b, e]
            powers[m] = vec * grid.step
            total += float(policy.extra["success"][vec].sum())
            b = b + N * inc - int(vec.sum())
            continue
        for n in range(N):
            t = m * N + n
            g = int(gain_idx[m, n])
            p = policy.act(t, b, g, e)
            powers[m, n] = p * grid.step
            total += block_utility(spec, gvals[g], p * grid.step)
            b = b + inc - p
    return Rollout(powers, gvals[gain_idx], rates, total)


def sample_indices(model: StochasticModel, rng: np.random.Generator):
    """Draw EH-state and gain indices for one trial by inverse-CDF lookups."""
    values, init, trans = model.eh_chain()
    M, N = model.M, model.N
    eh = np.zeros(M, dtype=np.int64)
    u = rng.random(M)
    eh[0] = min(int(np.searchsorted(np.cumsum(init), u[0], side="right")), init.size - 1)
    for m in range(1, M):
        row = np.cumsum(trans[m - 1][eh[m - 1]])
        eh[m] = min(int(np.searchsorted(row, u[m], side="right")), row.size - 1)
    if model.channel is None:
        g = np.zeros((M, N), dtype=np.int64)
    else:
        cdf = np.cumsum(model.channel.probs)
        g = np.minimum(np.searchsorted(cdf, rng.random((M, N)), side="right"), cdf.size - 1)
    return eh, g


@dataclass(frozen=True)
class SimResult:
    mean: float
    stderr: float
    utilities: np.ndarray
    trajectories: tuple = ()


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, trial)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


def simulate_policy(policy, spec: UtilitySpec, trials: int, seed: int = 0,
                    keep_trajectories: bool = False) -> SimResult:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    model = policy.model
    b0 = policy.initial_level * policy.grid.step
    utils = np.empty(trials)
    logs = []
    for i in range(trials):
        eh, g = sample_indices(model, trial_rng(seed, i))
        r = rollout(policy, spec, eh, g)
        profile = EhProfile(r.rates, model.N)
        slack = b0 + energy_slack(PowerSchedule(r.powers), profile)
        if np.any(slack < -DEFAULT_TOL):
            raise AssertionError(f"policy rollout violated the EH constraints in trial {i}")
        utils[i] = r.utility
        if keep_trajectories:
            logs.append(r)
    stderr = float(utils.std(ddof=1) / math.sqrt(trials)) if np.ptp(utils) > 0 else 0.0
    return SimResult(float(utils.mean()), stderr, utils, tuple(logs))
