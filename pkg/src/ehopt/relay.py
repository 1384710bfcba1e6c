"""Two-hop decode-and-forward relay with energy-harvesting source and relay.

Both links are AWGN with constant gains.  The relay transmits and receives
on separate bands, so it can forward in the same block it receives.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize, nnls

from .model import ChannelTrace, ConfigError, EhProfile, PowerSchedule
from .offline import solve_throughput_case1, taut_string

LN2 = math.log(2.0)


class Traffic(enum.Enum):
    DELAY_CONSTRAINED = "delay-constrained"
    DELAY_TOLERANT = "delay-tolerant"


@dataclass(frozen=True)
class OneWaySharing:
    """Source may send energy to the relay; the relay receives ``alpha`` of it."""

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"transfer efficiency must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class RelayScenario:
    source: EhProfile
    relay: EhProfile
    g_sr: float
    g_rd: float
    traffic: Traffic = Traffic.DELAY_CONSTRAINED
    sharing: Optional[OneWaySharing] = None

    def __post_init__(self):
        if self.source.shape != self.relay.shape:
            raise ValueError("source and relay profiles must have the same M and N")
        if self.g_sr < 0 or self.g_rd < 0:
            raise ValueError("link gains must be non-negative")

    @property
    def shape(self):
        return self.source.shape


@dataclass(frozen=True)
class RelaySolution:
    source_schedule: PowerSchedule
    relay_schedule: PowerSchedule
    transfers: np.ndarray
    throughput: float
    kkt_residual: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    def source_bits(self, sc: RelayScenario) -> np.ndarray:
        return np.log2(1.0 + sc.g_sr * self.source_schedule.flat())

    def relay_bits(self, sc: RelayScenario) -> np.ndarray:
        return np.log2(1.0 + sc.g_rd * self.relay_schedule.flat())


def relay_slacks(sc: RelayScenario, sol: RelaySolution) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative energy slack at the source and the relay after transfers."""
    x = np.cumsum(sol.transfers.ravel())
    alpha = sc.sharing.alpha if sc.sharing else 1.0
    s = sc.source.cumulative() - sol.source_schedule.cumulative() - x
    r = sc.relay.cumulative() + alpha * x - sol.relay_schedule.cumulative()
    return s, r


def _zero(sc: RelayScenario, **info) -> RelaySolution:
    z = PowerSchedule.zeros(sc.source)
    return RelaySolution(z, z, np.zeros(sc.shape), 0.0, info=info)


def _require(sc: RelayScenario, traffic: Traffic, sharing: bool):
    if (sc.sharing is not None) != sharing:
        raise ConfigError("energy sharing setting does not match this solver")
    if not sharing and sc.traffic is not traffic:
        raise ConfigError(f"scenario traffic is {sc.traffic.value}, solver expects {traffic.value}")


def solve_relay_delay_constrained(sc: RelayScenario) -> RelaySolution:
    """Per-block min-rate objective.

    Balancing the two hops (g_sr P_S = g_rd P_R) never hurts, so the problem
    is a single equal-gain staircase on the common SNR with cumulative cap
    min(g_sr H_S, g_rd H_R).
    """
    _require(sc, Traffic.DELAY_CONSTRAINED, sharing=False)
    return _delay_constrained(sc)


def _delay_constrained(sc: RelayScenario) -> RelaySolution:
    if sc.g_sr == 0 or sc.g_rd == 0:
        return _zero(sc)
    cap = np.minimum(sc.g_sr * sc.source.cumulative(), sc.g_rd * sc.relay.cumulative())
    y = taut_string(cap) if cap[-1] > 0 else np.zeros(cap.size)
    ps = PowerSchedule.from_flat(y / sc.g_sr, sc.source)
    pr = PowerSchedule.from_flat(y / sc.g_rd, sc.source)
    bits = float(np.sum(np.log2(1.0 + y)))
    return RelaySolution(ps, pr, np.zeros(sc.shape), bits, info={"snr": y})


# Small smooth convex programs -------------------------------------------------


def _kkt_nnls(grad: np.ndarray, jac_active: np.ndarray) -> float:
    """Stationarity residual of max f s.t. c_i(x) <= 0 given the active rows."""
    if jac_active.size == 0:
        return float(np.abs(grad).max())
    lam, _ = nnls(jac_active.T, grad)
    return float(np.abs(jac_active.T @ lam - grad).max())


def _maximize(fun, grad, cons, x0, bounds, tol=1e-14, maxiter=500):
    res = minimize(lambda v: -fun(v), x0, jac=lambda v: -grad(v), bounds=bounds,
                   constraints=cons, method="SLSQP",
                   options={"ftol": tol, "maxiter": maxiter})
    return np.asarray(res.x, dtype=float)


def _relay_forwarding(D: np.ndarray, H: np.ndarray, g: float):
    """max sum rho s.t. cumsum rho <= D and cumsum (2^rho - 1)/g <= H."""
    T = D.size
    tri = np.tril(np.ones((T, T)))
    if g == 0 or D[-1] <= 0 or H[-1] <= 0:
        return np.zeros(T), 0.0
    # the energy-only staircase is optimal when it already respects D
    snr = taut_string(g * H)
    rho0 = np.log2(1.0 + snr)
    if np.all(np.cumsum(rho0) <= D + 1e-12):
        return rho0, 0.0

    def energy(r):
        return tri @ ((np.exp2(r) - 1.0) / g)

    def energy_jac(r):
        return tri * (np.exp2(r) * LN2 / g)[None, :]

    cons = [
        {"type": "ineq", "fun": lambda r: D - tri @ r, "jac": lambda r: -tri},
        {"type": "ineq", "fun": lambda r: H - energy(r), "jac": lambda r: -energy_jac(r)},
    ]
    # feasible start: a scaled-down staircase
    start = np.minimum(rho0, np.maximum(np.diff(np.concatenate([[0.0], D])), 0.0)) * 0.5
    r = _maximize(np.sum, lambda v: np.ones(T), cons, start, [(0.0, None)] * T)
    r = np.maximum(r, 0.0)
    # the solver may overshoot a constraint by round-off
    feasible = lambda v: np.all(tri @ v <= D + 1e-12) and np.all(energy(v) <= H + 1e-12)
    if not feasible(r):
        r = _shrink_to_feasible(r, feasible)
    scale = max(1.0, float(D[-1]), float(H[-1]))
    act = [tri[i] for i in range(T) if D[i] - tri[i] @ r <= 1e-7 * scale]
    ej = energy_jac(r)
    act += [ej[i] for i in range(T) if H[i] - energy(r)[i] <= 1e-7 * scale]
    act += [-np.eye(T)[i] for i in range(T) if r[i] <= 1e-9]
    kkt = _kkt_nnls(np.ones(T), np.array(act))
    return r, kkt


def _shrink_to_feasible(v, ok):
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(v * mid):
            lo = mid
        else:
            hi = mid
    return v * lo


def solve_relay_delay_tolerant(sc: RelayScenario) -> RelaySolution:
    """Source runs its own staircase; the relay then forwards as many of the
    received bits as its energy allows, never ahead of what has arrived."""
    _require(sc, Traffic.DELAY_TOLERANT, sharing=False)
    if sc.g_sr == 0 or sc.g_rd == 0:
        return _zero(sc)
    src = solve_throughput_case1(sc.source, ChannelTrace.constant(sc.source, sc.g_sr))
    received = np.log2(1.0 + sc.g_sr * src.schedule.flat())
    D = np.cumsum(received)
    rho, kkt = _relay_forwarding(D, sc.relay.cumulative(), sc.g_rd)
    pr = PowerSchedule.from_flat((np.exp2(rho) - 1.0) / sc.g_rd, sc.relay)
    bits = float(min(D[-1], rho.sum()))
    return RelaySolution(src.schedule, pr, np.zeros(sc.shape), bits, kkt_residual=kkt,
                         info={"received": received, "forwarded": rho})


def _sharing_constraints(sc: RelayScenario, alpha: float):
    """Rows A, b with A @ y <= b in per-block common-SNR variables y.

    With X the cumulative transfer, feasibility of some non-decreasing X >= 0 is
    max(0, max_{s<=t} (Y_s/g_rd - H_R(s))/alpha) <= H_S(t) - Y_t/g_sr for all t.
    """
    HS, HR = sc.source.cumulative(), sc.relay.cumulative()
    T = HS.size
    tri = np.tril(np.ones((T, T)))
    rows, rhs = [], []
    for t in range(T):
        rows.append(tri[t] / sc.g_sr)
        rhs.append(HS[t])
        for s in range(t + 1):
            rows.append(tri[s] / (alpha * sc.g_rd) + tri[t] / sc.g_sr)
            rhs.append(HS[t] + HR[s] / alpha)
    return np.array(rows), np.array(rhs)


def _lazy_transfers(sc: RelayScenario, y: np.ndarray, alpha: float) -> np.ndarray:
    Y = np.cumsum(y)
    need = (Y / sc.g_rd - sc.relay.cumulative()) / alpha
    X = np.maximum.accumulate(np.maximum(need, 0.0))
    return np.diff(np.concatenate([[0.0], X]))


def solve_relay_energy_sharing(sc: RelayScenario, allow_transfer: bool = True) -> RelaySolution:
    """Joint source/relay powers and source-to-relay transfers, min-rate objective.

    Hops are balanced as in the delay-constrained case, leaving a concave
    program in the common SNR with linear cumulative constraints.
    ``allow_transfer=False`` pins every transfer to zero.
    """
    if sc.sharing is None:
        raise ConfigError("energy sharing solver needs a sharing efficiency")
    alpha = sc.sharing.alpha
    base = _delay_constrained(sc)
    if not allow_transfer or sc.g_sr == 0 or sc.g_rd == 0:
        return base
    A, b = _sharing_constraints(sc, alpha)
    T = sc.source.horizon
    y0 = np.asarray(base.info.get("snr", np.zeros(T)), dtype=float)
    f = lambda y: float(np.sum(np.log2(1.0 + y)))
    grad = lambda y: 1.0 / ((1.0 + y) * LN2)
    cons = [{"type": "ineq", "fun": lambda y: b - A @ y, "jac": lambda y: -A}]
    y = np.maximum(_maximize(f, grad, cons, y0, [(0.0, None)] * T), 0.0)
    if np.any(A @ y > b + 1e-12):
        y = _shrink_to_feasible(y, lambda v: np.all(A @ v <= b + 1e-12))
    if f(y) < base.throughput:
        y = y0
    scale = max(1.0, float(np.abs(b).max()))
    act = [A[i] for i in range(A.shape[0]) if b[i] - A[i] @ y <= 1e-7 * scale]
    act += [-np.eye(T)[i] for i in range(T) if y[i] <= 1e-9]
    kkt = _kkt_nnls(grad(y), np.array(act))
    x = _lazy_transfers(sc, y, alpha)
    ps = PowerSchedule.from_flat(y / sc.g_sr, sc.source)
    pr = PowerSchedule.from_flat(y / sc.g_rd, sc.source)
    return RelaySolution(ps, pr, x.reshape(sc.shape), f(y), kkt_residual=kkt, info={"snr": y})
