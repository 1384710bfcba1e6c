"""Brute-force reference solvers for desk-scale instances.

Nothing here imports the offline, online or relay solvers; only the data
types, the fading laws and the max-plus kernel are shared.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import kernels
from .fading import FadingModel, ergodic_rate
from .model import (
    DEFAULT_TOL,
    ChannelTrace,
    ConfigError,
    EhProfile,
    ErgodicThroughput,
    NonOutage,
    PowerSchedule,
    Throughput,
    UtilitySpec,
    check_feasible,
)

MAX_EVALUATIONS = 10 ** 8
MAX_POLICIES = 10 ** 6
MAX_SERVE_BLOCKS = 22


class OracleSizeError(ValueError):
    """Instance too large for exhaustive search."""


@dataclass(frozen=True)
class GridSpec:
    step: float
    max_evaluations: int = MAX_EVALUATIONS

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("grid step must be positive")


@dataclass(frozen=True)
class OracleResult:
    schedule: PowerSchedule
    utility: float
    evaluations: int = 0

    def __iter__(self):
        yield self.schedule
        yield self.utility


def _floor_index(x: np.ndarray, step: float) -> np.ndarray:
    return np.floor(np.asarray(x) / step + 1e-9).astype(np.int64)


def _block_table(spec: UtilitySpec, source, t: int, power: np.ndarray) -> np.ndarray:
    if isinstance(spec, Throughput):
        if not isinstance(source, ChannelTrace):
            raise ConfigError("throughput oracle needs a channel trace")
        return np.log2(1.0 + source.flat()[t] * power)
    if isinstance(spec, NonOutage):
        fading = spec.fading if spec.fading is not None else (
            source if isinstance(source, FadingModel) else None)
        if fading is None:
            if not isinstance(source, ChannelTrace):
                raise ConfigError("outage oracle needs a channel trace or a fading law")
            g = source.flat()[t]
            return (g * power >= spec.snr_threshold * (1 - 1e-12)).astype(float)
        out = np.zeros(power.shape)
        pos = power > 0
        out[pos] = fading.sf(spec.snr_threshold / power[pos])
        return out
    if isinstance(spec, ErgodicThroughput):
        return np.array([ergodic_rate(spec.fading, x) for x in power])
    raise ConfigError(f"unsupported utility {spec!r}")


def brute_force_offline(profile: EhProfile, source: Union[ChannelTrace, FadingModel, None],
                        spec: UtilitySpec, grid: GridSpec,
                        backend: Optional[str] = None) -> OracleResult:
    """Exhaustive search over grid schedules obeying the cumulative EH bounds.

    The search is organised as a backward sweep over cumulative consumption
    so each grid schedule is scored once per stage rather than once per
    complete vector; the optimum is the same as plain nested enumeration.
    Ties resolve to the lexicographically smallest power vector.
    """
    step = grid.step
    cap = _floor_index(profile.cumulative(), step)
    T = cap.size
    evals = int(np.sum((cap + 1.0) ** 2))
    if evals > grid.max_evaluations:
        raise OracleSizeError(f"grid search needs ~{evals:.3g} evaluations, limit "
                              f"{grid.max_evaluations:.3g}")
    K = int(cap[-1])
    power = step * np.arange(K + 1)
    tables = [_block_table(spec, source, t, power) for t in range(T)]
    # W[c] = best utility from stage t on, given c units consumed before t.
    W = np.zeros(K + 1)
    W[np.arange(K + 1) > cap[-1]] = -np.inf
    args = [None] * T
    for t in range(T - 1, -1, -1):
        lim = int(cap[t])
        Wm = W.copy()
        Wm[lim + 1:] = -np.inf
        # out[c] = max_p u[p] + Wm[c + p], computed on the reversed axis
        rev, arg = kernels.maxplus_conv(tables[t], Wm[::-1], K + 1, backend=backend)
        W = rev[::-1].copy()
        args[t] = arg[::-1].copy()
        if t > 0:
            W[int(cap[t - 1]) + 1:] = -np.inf
    p = np.zeros(T, dtype=np.int64)
    c = 0
    for t in range(T):
        p[t] = args[t][c]
        c += p[t]
    sched = PowerSchedule.from_flat(p * step, profile)
    util = float(sum(tables[t][p[t]] for t in range(T)))
    return OracleResult(sched, util, evals)


def enumerate_offline(profile: EhProfile, source, spec: UtilitySpec, step: float,
                      limit: int = 10 ** 6) -> OracleResult:
    """Plain nested enumeration; only for tiny instances and cross-checks."""
    cap = _floor_index(profile.cumulative(), step)
    T = cap.size
    K = int(cap[-1])
    if (K + 1) ** T > limit:
        raise OracleSizeError("nested enumeration too large")
    power = step * np.arange(K + 1)
    tables = [_block_table(spec, source, t, power) for t in range(T)]
    best, best_p = -math.inf, None
    for vec in itertools.product(range(K + 1), repeat=T):
        if np.any(np.cumsum(vec) > cap):
            continue
        u = sum(tables[t][vec[t]] for t in range(T))
        if u > best:
            best, best_p = u, vec
    return OracleResult(PowerSchedule.from_flat(np.array(best_p) * step, profile), float(best))


@dataclass(frozen=True)
class ServeSetResult:
    outages: int
    members: tuple[int, ...]   # 1-based flat block indices
    schedule: PowerSchedule


def brute_force_serve_sets(profile: EhProfile, trace: ChannelTrace, rate: float,
                           tol: float = DEFAULT_TOL, backend: Optional[str] = None) -> ServeSetResult:
    """Largest set of blocks that can each get exactly the minimum power for ``rate``."""
    if trace.shape != profile.shape:
        raise ValueError("trace and profile shapes differ")
    T = profile.horizon
    if T > MAX_SERVE_BLOCKS:
        raise OracleSizeError(f"{T} blocks exceed the subset-search limit {MAX_SERVE_BLOCKS}")
    g = trace.flat()
    need = np.full(T, np.inf)
    pos = g > 0
    need[pos] = (2.0 ** rate - 1.0) / g[pos]
    mask, count = kernels.best_serve_set(need, profile.cumulative(), tol, backend=backend)
    members = tuple(t + 1 for t in range(T) if (mask >> t) & 1)
    p = np.zeros(T)
    for t in members:
        p[t - 1] = need[t - 1]
    sched = PowerSchedule.from_flat(p, profile)
    assert check_feasible(sched, profile, tol)
    return ServeSetResult(T - count, members, sched)


def brute_force_policies(model, spec: UtilitySpec, grid, max_policies: int = MAX_POLICIES) -> float:
    """Best expected utility over deterministic Markov policies on the grid.

    Searches every assignment of grid actions to the states reachable at each
    stage (layer by layer) and evaluates expectations exactly.  ``model`` is
    an ``online.StochasticModel`` and ``grid`` an ``online.BatteryGrid``; only
    their fields are read.
    """
    M, N = model.num_eh_blocks, model.blocks_per_eh
    T = M * N
    eh = model.eh
    if hasattr(eh, "rates"):
        rates = [np.array([r]) for r in eh.rates]
        init = np.ones(1)
        trans = [np.ones((1, 1))] * M
    elif hasattr(eh, "matrix"):
        rates = [eh.values] * M
        init = eh.initial
        trans = [eh.matrix] * M
    else:
        rates = [eh.values] * M
        init = eh.probs
        trans = [np.tile(eh.probs, (eh.values.size, 1))] * M
    inc = [np.rint(r / grid.step).astype(int) for r in rates]
    if model.channel is None:
        raise ConfigError("policy enumeration needs a channel process")
    gv, gp = model.channel.values, model.channel.probs

    def utility(g: int, a: int) -> float:
        p = a * grid.step
        if isinstance(spec, Throughput):
            return math.log2(1.0 + gv[g] * p)
        if isinstance(spec, NonOutage) and spec.fading is None:
            return float(gv[g] * p >= spec.snr_threshold * (1 - 1e-12))
        raise ConfigError(f"unsupported utility {spec!r}")

    leaves = 0

    def search(t: int, dist: dict) -> float:
        nonlocal leaves
        if t == T:
            leaves += 1
            if leaves > max_policies:
                raise OracleSizeError(f"more than {max_policies} policies")
            return 0.0
        m, n = divmod(t, N)
        states = sorted(dist)
        choices = [range(b + int(inc[m][e]) + 1) for (b, g, e) in states]
        best = -math.inf
        for acts in itertools.product(*choices):
            val = 0.0
            nxt: dict = defaultdict(float)
            for (b, g, e), a in zip(states, acts):
                pr = dist[(b, g, e)]
                val += pr * utility(g, a)
                if t + 1 == T:
                    continue
                left = b + int(inc[m][e]) - a
                if n + 1 < N:
                    nexts = [(e, 1.0)]
                else:
                    nexts = [(e2, trans[m][e, e2]) for e2 in range(len(rates[m + 1]))]
                for e2, pe in nexts:
                    for g2 in range(gv.size):
                        w = pr * pe * gp[g2]
                        if w > 0:
                            nxt[(left, g2, e2)] += w
            val += search(t + 1, nxt)
            if val > best:
                best = val
        return best

    b0 = 0
    start: dict = defaultdict(float)
    for e in range(init.size):
        for g in range(gv.size):
            if init[e] * gp[g] > 0:
                start[(b0, g, e)] += init[e] * gp[g]
    return float(search(0, start))


# Relay references ---------------------------------------------------------------


def _relay_grid_single(sc, step: float, max_evaluations: int) -> float:
    """Literal grid search for a one-block relay scenario.

    Each node's grid is ``0, step, 2*step, ...`` plus its exact budget, so an
    off-lattice harvest is not rounded down.
    """
    es, er = sc.source.total(), sc.relay.total()
    ks, kr = int(math.floor(es / step + 1e-9)), int(math.floor(er / step + 1e-9))
    if (ks + 2) * (kr + 2) > max_evaluations:
        raise OracleSizeError("relay grid too large")
    if sc.sharing is None:
        ps = np.append(step * np.arange(ks + 1), es)
        pr = np.append(step * np.arange(kr + 1), er)
        rs = np.log2(1.0 + sc.g_sr * ps)
        rr = np.log2(1.0 + sc.g_rd * pr)
        best = 0.0
        for chunk in np.array_split(rs, max(1, rs.size // 2048)):
            best = max(best, float(np.minimum(chunk[:, None], rr[None, :]).max()))
        return best
    # sharing: grid over the transfer; both nodes then spend all they hold,
    # which is never worse because the objective is non-decreasing in each power
    alpha = sc.sharing.alpha
    x = np.append(step * np.arange(ks + 1), es)
    rs = np.log2(1.0 + sc.g_sr * np.maximum(es - x, 0.0))
    rr = np.log2(1.0 + sc.g_rd * (er + alpha * x))
    return float(np.minimum(rs, rr).max())


def _relay_local(sc, x0, seed_scale):
    from scipy.optimize import minimize

    T = sc.source.horizon
    HS, HR = sc.source.cumulative(), sc.relay.cumulative()
    tri = np.tril(np.ones((T, T)))
    Z = np.zeros((T, T))
    gs, gr = sc.g_sr, sc.g_rd
    tolerant = sc.sharing is None and sc.traffic.value == "delay-tolerant"
    alpha = sc.sharing.alpha if sc.sharing is not None else None
    if tolerant:
        # v = [P_S, rho]
        def cons_f(v):
            ps, rho = v[:T], v[T:]
            return np.concatenate([
                HS - tri @ ps,
                tri @ np.log2(1.0 + gs * ps) - tri @ rho,
                HR - tri @ ((np.exp2(rho) - 1.0) / gr),
            ])

        def cons_j(v):
            ps, rho = v[:T], v[T:]
            d = gs / ((1.0 + gs * ps) * math.log(2.0))
            e = np.exp2(rho) * math.log(2.0) / gr
            return np.vstack([np.hstack([-tri, Z]), np.hstack([tri * d, -tri]),
                              np.hstack([Z, -tri * e])])

        obj = lambda v: -v[T:].sum()
        jac = lambda v: np.concatenate([np.zeros(T), -np.ones(T)])
        nv = 2 * T
    else:
        # v = [P_S, P_R, x, z]; x pinned to zero without sharing
        def cons_f(v):
            ps, pr, x, z = v[:T], v[T:2 * T], v[2 * T:3 * T], v[3 * T:]
            a = alpha if alpha is not None else 0.0
            return np.concatenate([
                HS - tri @ (ps + x),
                HR + a * (tri @ x) - tri @ pr,
                np.log2(1.0 + gs * ps) - z,
                np.log2(1.0 + gr * pr) - z,
            ])

        def cons_j(v):
            ps, pr = v[:T], v[T:2 * T]
            a = alpha if alpha is not None else 0.0
            I = np.eye(T)
            ds = np.diag(gs / ((1.0 + gs * ps) * math.log(2.0)))
            dr = np.diag(gr / ((1.0 + gr * pr) * math.log(2.0)))
            return np.vstack([
                np.hstack([-tri, Z, -tri, Z]),
                np.hstack([Z, -tri, a * tri, Z]),
                np.hstack([ds, Z, Z, -I]),
                np.hstack([Z, dr, Z, -I]),
            ])

        obj = lambda v: -v[3 * T:].sum()
        jac = lambda v: np.concatenate([np.zeros(3 * T), -np.ones(T)])
        nv = 4 * T
    bounds = [(0.0, None)] * nv
    if not tolerant and alpha is None:
        bounds[2 * T:3 * T] = [(0.0, 0.0)] * T
    res = minimize(obj, x0, jac=jac, bounds=bounds, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": cons_f, "jac": cons_j}],
                   options={"ftol": 1e-14, "maxiter": 1000})
    v = np.maximum(res.x, 0.0)
    if np.all(cons_f(v) >= -1e-9):
        return -obj(v), nv
    return -math.inf, nv


def relay_reference(sc, step: float = 1e-3, starts: int = 6, seed: int = 0,
                    max_evaluations: int = MAX_EVALUATIONS) -> float:
    """Best end-to-end throughput for a relay scenario, independent of the relay solvers.

    One-block scenarios use a literal grid with spacing ``step``.  Longer
    horizons solve the raw epigraph formulation (source and relay powers,
    transfers, bit causality) from several deterministic starting points and
    keep the best feasible value.
    """
    if sc.g_sr == 0 or sc.g_rd == 0:
        return 0.0
    T = sc.source.horizon
    if T == 1:
        return _relay_grid_single(sc, step, max_evaluations)
    rng = np.random.default_rng(seed)
    tolerant = sc.sharing is None and sc.traffic.value == "delay-tolerant"
    nv = 2 * T if tolerant else 4 * T
    best = 0.0
    for k in range(starts):
        x0 = np.zeros(nv) if k == 0 else rng.uniform(0.0, 0.2, nv) * (1 + sc.source.total())
        val, _ = _relay_local(sc, x0, 1.0)
        best = max(best, val)
    return float(best)
