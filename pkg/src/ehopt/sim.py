"""Trace generation and Monte Carlo comparison of scheduling policies.

Each trial draws its trace from its own counter-based stream keyed by
``(seed, trial)``; every policy is scored on that same trace.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .fading import FadingModel, OutageFn
from .model import (
    ChannelTrace,
    ConfigError,
    EhProfile,
    NonOutage,
    PowerSchedule,
    Throughput,
    UtilitySpec,
    check_feasible,
    served,
)
from .offline import solve_outage_case1, solve_outage_case4_noncausal, solve_throughput_case1
from .online import (
    EhProcess,
    FixedRates,
    GainProcess,
    IIDRates,
    StochasticModel,
    default_grid,
    rollout,
    solve_dp_case2,
    solve_dp_case3,
    solve_dp_outage_case4_causal,
    trial_rng,
)

GainSource = Union[FadingModel, GainProcess, None]


def quantize_fading(fading: FadingModel, levels: int) -> GainProcess:
    """Equal-probability quantization at the bin-midpoint quantiles."""
    if levels < 1:
        raise ValueError("need at least one level")
    q = (np.arange(levels) + 0.5) / levels
    values = np.asarray(fading.ppf(q), dtype=float)
    return GainProcess(values, np.full(levels, 1.0 / levels))


@dataclass(frozen=True)
class TraceGenerator:
    num_eh_blocks: int
    blocks_per_eh: int
    eh: EhProcess
    fading: GainSource = None
    seed: int = 0

    @property
    def shape(self):
        return (self.num_eh_blocks, self.blocks_per_eh)

    def model(self) -> StochasticModel:
        ch = self.fading if isinstance(self.fading, GainProcess) else (
            GainProcess.constant(1.0) if self.fading is None else None)
        return StochasticModel(self.eh, ch, self.num_eh_blocks, self.blocks_per_eh)

    def to_dict(self) -> dict:
        eh = self.eh
        if isinstance(eh, FixedRates):
            ehd = {"fixed": eh.rates.tolist()}
        elif isinstance(eh, IIDRates):
            ehd = {"iid": {"values": eh.values.tolist(), "probs": eh.probs.tolist()}}
        else:
            ehd = {"markov": {"values": eh.values.tolist(), "matrix": eh.matrix.tolist(),
                              "initial": eh.initial.tolist()}}
        if self.fading is None:
            fd = None
        elif isinstance(self.fading, GainProcess):
            fd = {"discrete": {"values": self.fading.values.tolist(),
                               "probs": self.fading.probs.tolist()}}
        else:
            fd = self.fading.to_dict()
        return {"M": self.num_eh_blocks, "N": self.blocks_per_eh, "eh": ehd,
                "fading": fd, "seed": self.seed}


@dataclass(frozen=True)
class Trace:
    profile: EhProfile
    channel: ChannelTrace
    eh_idx: np.ndarray
    gain_idx: Optional[np.ndarray]


def _pick(cdf: np.ndarray, u):
    return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


def generate_trace(gen: TraceGenerator, trial: int) -> Trace:
    """EH rates per EH block and gains per communication block for one trial."""
    rng = trial_rng(gen.seed, trial)
    M, N = gen.shape
    u_eh = rng.random(M)
    u_g = rng.random((M, N))
    model = StochasticModel(gen.eh, None, M, N)
    values, init, trans = model.eh_chain()
    eh_idx = np.zeros(M, dtype=np.int64)
    eh_idx[0] = _pick(np.cumsum(init), u_eh[0])
    for m in range(1, M):
        eh_idx[m] = _pick(np.cumsum(trans[m - 1][eh_idx[m - 1]]), u_eh[m])
    rates = values[np.arange(M), eh_idx]
    if gen.fading is None:
        gains, gidx = np.ones((M, N)), np.zeros((M, N), dtype=np.int64)
    elif isinstance(gen.fading, GainProcess):
        gidx = _pick(np.cumsum(gen.fading.probs), u_g)
        gains = gen.fading.values[gidx]
    else:
        gains, gidx = np.asarray(gen.fading.ppf(u_g), dtype=float), None
    return Trace(EhProfile(rates, N), ChannelTrace(gains), eh_idx, gidx)


# Policies -------------------------------------------------------------------


def score(spec: UtilitySpec, trace: Trace, powers: np.ndarray) -> float:
    """Realized utility of a schedule on a trace."""
    g = trace.channel.gains
    if isinstance(spec, Throughput):
        return float(np.log2(1.0 + g * powers).sum())
    if isinstance(spec, NonOutage):
        return float(served(g, powers, spec.rate).sum())
    raise ConfigError(f"cannot simulate utility {spec!r}")


class Policy:
    name = "policy"

    def prepare(self, gen: TraceGenerator, spec: UtilitySpec) -> None:
        """Solve whatever can be solved before seeing any trace."""

    def powers(self, trace: Trace) -> np.ndarray:
        raise NotImplementedError


class OfflineCase1(Policy):
    """Re-solved on every trace with the whole future known."""

    name = "offline-case1"

    def prepare(self, gen, spec):
        if isinstance(spec, NonOutage) and spec.fading is not None:
            raise ConfigError("offline-case1 needs a known-CSIT utility")
        self.spec = spec

    def powers(self, trace):
        if isinstance(self.spec, Throughput):
            return solve_throughput_case1(trace.profile, trace.channel).schedule.powers
        return solve_outage_case1(trace.profile, trace.channel, self.spec.rate).schedule.powers


class _GridPolicy(Policy):
    def __init__(self, grid_points: int = 201):
        self.grid_points = grid_points

    def _model(self, gen: TraceGenerator) -> StochasticModel:
        if gen.fading is not None and not isinstance(gen.fading, GainProcess):
            raise ConfigError(f"{self.name} needs a finite-support gain process")
        return gen.model()


class DpCase2(_GridPolicy):
    name = "dp-case2"

    def prepare(self, gen, spec):
        model = self._model(gen)
        self.policy = solve_dp_case2(model, spec, default_grid(model, self.grid_points))
        self.spec = spec

    def powers(self, trace):
        return rollout(self.policy, self.spec, trace.eh_idx, trace.gain_idx).powers


class DpCase3(_GridPolicy):
    """DP re-solved for each realized EH sequence, on one grid shared by all of them."""

    name = "dp-case3"

    def prepare(self, gen, spec):
        self.model = self._model(gen)
        self.grid = default_grid(self.model, self.grid_points)
        self.spec = spec
        self.cache: dict = {}

    def powers(self, trace):
        key = tuple(trace.eh_idx.tolist())
        if key not in self.cache:
            self.cache[key] = solve_dp_case3(trace.profile, self.model.channel, self.spec,
                                             self.grid)
        pol = self.cache[key]
        return rollout(pol, self.spec, np.zeros(self.model.M, dtype=np.int64),
                       trace.gain_idx).powers


class Myopic(Policy):
    name = "myopic"

    def powers(self, trace):
        # the battery never holds anything, so each block spends its own harvest
        return np.repeat(trace.profile.rates[:, None], trace.profile.N, axis=1)


class SaveThenTransmit(Policy):
    """Non-causal ESIT, no CSIT: per-trace save-then-transmit."""

    name = "save-then-transmit"

    def prepare(self, gen, spec):
        if not (isinstance(spec, NonOutage) and spec.fading is not None):
            raise ConfigError("save-then-transmit needs an outage utility with a fading law")
        self.ofn = OutageFn(spec.fading, spec.rate)

    def powers(self, trace):
        return solve_outage_case4_noncausal(trace.profile, self.ofn).schedule.powers


class DpCase4(_GridPolicy):
    """Causal ESIT, no CSIT: one power vector per EH block."""

    name = "dp-case4"

    def prepare(self, gen, spec):
        if not (isinstance(spec, NonOutage) and spec.fading is not None):
            raise ConfigError("dp-case4 needs an outage utility with a fading law")
        model = StochasticModel(gen.eh, None, gen.num_eh_blocks, gen.blocks_per_eh)
        self.ofn = OutageFn(spec.fading, spec.rate, compute_critical=False)
        self.policy = solve_dp_outage_case4_causal(model, self.ofn,
                                                   default_grid(model, self.grid_points))
        self.spec = spec

    def powers(self, trace):
        M, N = trace.profile.shape
        return rollout(self.policy, self.spec, trace.eh_idx, np.zeros((M, N), dtype=np.int64)).powers


class ConstantPower(Policy):
    """Same power in every block regardless of energy; only meaningful for outage checks."""

    name = "constant"

    def __init__(self, power: float):
        self.power = float(power)

    def powers(self, trace):
        return np.full(trace.profile.shape, self.power)


POLICIES = {cls.name: cls for cls in (OfflineCase1, DpCase2, DpCase3, Myopic,
                                      SaveThenTransmit, DpCase4)}


def make_policy(name: str, **kwargs) -> Policy:
    try:
        return POLICIES[name](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None


# Experiments ------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    generator: TraceGenerator
    spec: UtilitySpec
    name: str = "scenario"

    def digest(self) -> str:
        spec = self.spec
        sd = {"type": type(spec).__name__}
        if isinstance(spec, NonOutage):
            sd["rate"] = spec.rate
            sd["fading"] = spec.fading.to_dict() if spec.fading is not None else None
        blob = json.dumps({"generator": self.generator.to_dict(), "utility": sd},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class PolicyStats:
    policy: str
    mean: float
    stderr: float
    utilities: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class ExperimentReport:
    scenario: str
    digest: str
    trials: int
    seed: int
    stats: tuple[PolicyStats, ...]

    def by_name(self, name: str) -> PolicyStats:
        for s in self.stats:
            if s.policy == name:
                return s
        raise KeyError(name)

    def paired_gap(self, a: str, b: str) -> tuple[float, float]:
        """Mean and standard error of per-trial utility(a) - utility(b)."""
        d = self.by_name(a).utilities - self.by_name(b).utilities
        return float(d.mean()), _stderr(d)


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 and np.ptp(x) > 0 else 0.0


def _run_trials(gen: TraceGenerator, spec: UtilitySpec, policies: Sequence[Policy],
                trials: range) -> np.ndarray:
    out = np.empty((len(policies), len(trials)))
    for j, i in enumerate(trials):
        tr = generate_trace(gen, i)
        for k, pol in enumerate(policies):
            p = np.maximum(np.asarray(pol.powers(tr), dtype=float), 0.0)
            if not isinstance(pol, ConstantPower) and not check_feasible(PowerSchedule(p), tr.profile):
                raise RuntimeError(f"{pol.name} broke the EH constraints in trial {i}")
            out[k, j] = score(spec, tr, p)
    return out


def _chunk_job(args):
    gen, spec, policies, lo, hi = args
    return _run_trials(gen, spec, policies, range(lo, hi))


def run_experiment(scenarios: Sequence[Scenario], policies: Sequence[Union[str, Policy]],
                   trials: int, seed: int = 0, workers: Optional[int] = None) -> list[ExperimentReport]:
    """Score every policy on the same per-trial traces of every scenario.

    ``workers`` defaults to the ``EHOPT_WORKERS`` environment variable (1 if
    unset); results do not depend on it.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not policies:
        raise ValueError("at least one policy is required")
    if workers is None:
        workers = int(os.environ.get("EHOPT_WORKERS", "1") or 1)
    reports = []
    for sc in scenarios:
        gen = TraceGenerator(sc.generator.num_eh_blocks, sc.generator.blocks_per_eh,
                             sc.generator.eh, sc.generator.fading, seed)
        pols = [make_policy(p) if isinstance(p, str) else p for p in policies]
        for p in pols:
            p.prepare(gen, sc.spec)
        if workers > 1 and trials > 1:
            bounds = np.linspace(0, trials, min(workers * 4, trials) + 1).astype(int)
            jobs = [(gen, sc.spec, pols, int(lo), int(hi))
                    for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            with ProcessPoolExecutor(workers) as ex:
                util = np.concatenate(list(ex.map(_chunk_job, jobs)), axis=1)
        else:
            util = _run_trials(gen, sc.spec, pols, range(trials))
        stats = tuple(PolicyStats(p.name, float(u.mean()), _stderr(u), u)
                      for p, u in zip(pols, util))
        reports.append(ExperimentReport(sc.name, sc.digest(), trials, seed, stats))
    return reports


def empirical_outage(fading: FadingModel, power: float, rate: float, trials: int,
                     seed: int = 0) -> float:
    """Outage frequency of a fixed power over ``trials`` single-block traces."""
    gen = TraceGenerator(1, trials, FixedRates([0.0]), fading, seed)
    tr = generate_trace(gen, 0)
    return 1.0 - float(served(tr.channel.gains, power, rate).mean())
