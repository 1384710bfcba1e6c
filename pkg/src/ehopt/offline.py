"""Solvers that see the whole future: channel gains and/or EH rates known up front."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fading import FadingModel, OutageFn, ergodic_rate, ergodic_rate_derivative
from .model import (
    DEFAULT_TOL,
    ChannelTrace,
    EhProfile,
    PowerSchedule,
)

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
_TIE_REL = 1e-12


@dataclass(frozen=True)
class WaterLevels:
    """Per-block water level and the flat indices where each epoch ends.

    ``inf`` marks epochs whose blocks all have zero gain (no finite level).
    """

    levels: np.ndarray
    epoch_ends: tuple[int, ...]


@dataclass(frozen=True)
class OfflineResult:
    schedule: PowerSchedule
    utility: float
    levels: Optional[WaterLevels] = None
    kkt_residual: float = 0.0
    outages: Optional[int] = None
    info: dict = field(default_factory=dict, compare=False)

    def __iter__(self):
        # allows ``schedule, utility = solve_...(...)``
        yield self.schedule
        yield self.utility


# single-budget water-filling --------------------------------------------------


def waterfill_budget(budget: float, gains) -> tuple[np.ndarray, float]:
    """Maximize sum log2(1 + g_i p_i) subject to sum p_i <= budget.

    Returns the powers and the common water level nu (p_i = max(0, nu - 1/g_i)).
    With zero budget the level is the largest one that still places no water;
    with no positive gain it is ``inf``.
    """
    g = np.asarray(gains, dtype=float)
    p = np.zeros(g.shape)
    if g.size == 0:
        return p, math.inf
    budget = max(float(budget), 0.0)
    pos = np.flatnonzero(g > 0)
    if pos.size == 0:
        return p, math.inf
    floors = 1.0 / g[pos]
    order = np.argsort(floors, kind="stable")
    fs = floors[order]
    if budget == 0.0:
        return p, float(fs[0])
    csum = np.cumsum(fs)
    k = fs.size
    # largest k with nu_k = (budget + sum_{i<k} f_i) / k  >  f_{k-1}
    ks = np.arange(1, k + 1)
    nus = (budget + csum) / ks
    ok = nus > fs
    ok[0] = True  # a positive budget always wets the lowest floor
    k = int(np.flatnonzero(ok)[-1]) + 1
    nu = float(nus[k - 1])
    p[pos] = np.maximum(nu - floors, 0.0)
    # exact budget: remove rounding drift on the active set
    active = pos[p[pos] > 0]
    drift = p.sum() - budget
    if active.size and drift != 0.0:
        p[active] = np.maximum(p[active] - drift / active.size, 0.0)
    return p, nu


def _staircase(cap: np.ndarray, gains: np.ndarray):
    """Epoch decomposition for max sum log2(1 + g p) s.t. cumsum(p) <= cap.

    From each epoch start, the epoch end is the horizon whose single-budget
    water level is smallest (furthest horizon on ties).  Levels come out
    non-decreasing and only rise where the cumulative constraint is tight.
    """
    T = cap.size
    powers = np.zeros(T)
    levels = np.zeros(T)
    ends = []
    t0, used = 0, 0.0
    while t0 < T:
        best_tau, best_nu, best_p = None, None, None
        for tau in range(t0 + 1, T + 1):
            budget = max(cap[tau - 1] - used, 0.0)
            p, nu = waterfill_budget(budget, gains[t0:tau])
            if best_nu is None:
                take = True
            elif math.isinf(nu) or math.isinf(best_nu):
                take = nu <= best_nu
            else:
                take = nu <= best_nu * (1 + _TIE_REL) + _TIE_REL
            if take:
                best_tau, best_nu, best_p = tau, nu, p
        powers[t0:best_tau] = best_p
        levels[t0:best_tau] = best_nu
        ends.append(best_tau - 1)
        used = min(used + best_p.sum(), cap[best_tau - 1])
        t0 = best_tau
    return powers, levels, tuple(ends)


def taut_string(cap) -> np.ndarray:
    """Equal-gain staircase: the schedule for any identical concave per-block utility."""
    cap = np.asarray(cap, dtype=float)
    p, _, _ = _staircase(cap, np.ones(cap.size))
    return p


# KKT certificate --------------------------------------------------------------


def kkt_residual(powers, cap, marginal: Callable[[np.ndarray], np.ndarray],
                 active_tol: float = 1e-12) -> float:
    """Worst violation of the KKT conditions of max sum u_t(p_t) s.t. cumsum(p) <= cap.

    ``marginal(p)`` returns u_t'(p_t) for a full flat power vector.  The
    multiplier of the constraint chain must be constant between tight
    constraints, non-increasing over time, equal to u_t' on active blocks, at
    least u_t'(0) on idle ones, and zero after the last tight constraint.
    Infeasibility counts toward the residual too.
    """
    p = np.asarray(powers, dtype=float)
    cap = np.asarray(cap, dtype=float)
    T = p.size
    slack = cap - np.cumsum(p)
    tight_tol = 1e-9 * max(1.0, abs(cap[-1]))
    res = max(0.0, -float(slack.min()))
    lam_active = marginal(p)
    lam_zero = marginal(np.zeros(T))
    active = p > active_tol
    ends = [int(t) for t in np.flatnonzero(slack <= tight_tol)]
    closed = set(ends)
    if not ends or ends[-1] != T - 1:
        ends.append(T - 1)
    prev_lam, start = math.inf, 0
    for end in ends:
        act = active[start:end + 1]
        idle_need = lam_zero[start:end + 1][~act]
        if end not in closed:
            # energy left over at the horizon: every marginal must vanish
            res = max(res, float(lam_active[start:end + 1].max()))
        elif act.any():
            vals = lam_active[start:end + 1][act]
            lam = float(vals.mean())
            res = max(res, float(vals.max() - vals.min()), lam - prev_lam)
            if idle_need.size:
                res = max(res, float(idle_need.max()) - lam)
            prev_lam = lam
        elif idle_need.size:
            res = max(res, float(idle_need.max()) - prev_lam)
        start = end + 1
    return float(max(res, 0.0))


def throughput_marginal(gains: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    g = np.asarray(gains, dtype=float)
    return lambda p: g / ((1.0 + g * p) * LN2)


# Case 1: throughput ---------------------------------------------------------


def solve_throughput_case1(profile: EhProfile, trace: ChannelTrace) -> OfflineResult:
    """Staircase water-filling with non-causal CSIT and ESIT."""
    if trace.shape != profile.shape:
        raise ValueError(f"trace shape {trace.shape} does not match profile {profile.shape}")
    cap = profile.cumulative()
    g = trace.flat()
    p, nu, ends = _staircase(cap, g)
    schedule = PowerSchedule.from_flat(p, profile)
    utility = float(np.sum(np.log2(1.0 + g * p)))
    res = kkt_residual(p, cap, throughput_marginal(g)) if cap[-1] > 0 and np.any(g > 0) else 0.0
    levels = WaterLevels(nu.reshape(profile.shape), ends)
    return OfflineResult(schedule, utility, levels=levels, kkt_residual=res)


# Case 4: ergodic throughput, non-causal ESIT ----------------------------------


def solve_ergodic_case4(profile: EhProfile, fading: FadingModel) -> OfflineResult:
    """Constant power per EH block; identical concave per-block utility means
    the equal-gain staircase over EH blocks is optimal for any fading law."""
    cap = np.cumsum(profile.rates)
    block_p = taut_string(cap) if cap[-1] > 0 else np.zeros(cap.size)
    N = profile.N
    utility = float(sum(N * ergodic_rate(fading, x) for x in block_p))
    marginal = lambda p: np.array([ergodic_rate_derivative(fading, x) for x in p])
    res = kkt_residual(block_p, cap, marginal) if cap[-1] > 0 else 0.0
    schedule = PowerSchedule(np.repeat(block_p[:, None], N, axis=1))
    return OfflineResult(schedule, utility, kkt_residual=res,
                         info={"block_powers": block_p})


# Case 4: outage, non-causal ESIT ----------------------------------------------


def _outage_total(ofn: OutageFn, p: np.ndarray) -> float:
    return float(np.sum(ofn.success_prob(p)))


def solve_outage_case4_noncausal(profile: EhProfile, ofn: OutageFn) -> OfflineResult:
    """Save-then-transmit: an idle prefix, then non-decreasing powers >= P_c.

    Every prefix length is tried; the transmit phase is the equal-gain
    staircase on the excess energy above P_c per block.
    """
    cap = profile.cumulative()
    T = cap.size
    if cap[-1] <= 0:
        return OfflineResult(PowerSchedule.zeros(profile), 0.0, info={"saving_blocks": T})
    pc = ofn.critical_point
    if pc == 0.0:
        p = taut_string(cap)
        return OfflineResult(PowerSchedule.from_flat(p, profile), _outage_total(ofn, p),
                             info={"saving_blocks": 0, "critical_point": 0.0})
    best_u, best_p, best_s = -math.inf, None, None
    if math.isfinite(pc):
        for s in range(T):
            steps = np.arange(1, T - s + 1)
            excess = cap[s:] - steps * pc
            if excess.min() < -1e-12 * max(1.0, cap[-1]):
                continue
            q = taut_string(np.maximum(excess, 0.0))
            p = np.zeros(T)
            p[s:] = pc + q
            u = _outage_total(ofn, p)
            if u > best_u + 1e-15:
                best_u, best_p, best_s = u, p, s
    if best_p is None:
        # not even one block can reach P_c: spend everything at the end
        best_p = np.zeros(T)
        best_p[-1] = cap[-1]
        best_u, best_s = _outage_total(ofn, best_p), T - 1
    return OfflineResult(PowerSchedule.from_flat(best_p, profile), best_u,
                         info={"saving_blocks": best_s, "critical_point": pc})


# Case 1: outage with known gains ----------------------------------------------


def solve_outage_case1(profile: EhProfile, trace: ChannelTrace, rate: float,
                       tol: float = DEFAULT_TOL) -> OfflineResult:
    """Serve blocks best-gain first at the minimum power meeting ``rate``.

    A block is kept only if the whole tentative schedule still satisfies the
    cumulative EH constraints.  One pass; ties in gain go to the earlier block.
    """
    if rate <= 0:
        raise ValueError("required rate must be positive")
    if trace.shape != profile.shape:
        raise ValueError(f"trace shape {trace.shape} does not match profile {profile.shape}")
    g = trace.flat()
    cap = profile.cumulative()
    T = g.size
    need = np.where(g > 0, (2.0 ** rate - 1.0) / np.where(g > 0, g, 1.0), np.inf)
    order = sorted(range(T), key=lambda t: (-g[t], t))
    p = np.zeros(T)
    for t in order:
        if g[t] <= 0:
            continue
        p[t] = need[t]
        if np.any(np.cumsum(p) > cap + tol):
            p[t] = 0.0
    schedule = PowerSchedule.from_flat(p, profile)
    served = int(np.count_nonzero(p))
    return OfflineResult(schedule, float(served), outages=T - served)
