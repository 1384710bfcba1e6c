"""Time-block grid, energy-harvesting constraints and per-block utilities.

Time is indexed two ways.  Externally blocks are addressed 1-based as
``(n, m)``: communication block ``n`` of EH block ``m``.  Internally every
(M, N) grid is stored as an ``(M, N)`` array and flattened in time order,
so flat index ``t = (m - 1) * N + (n - 1)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .fading import FadingModel

DEFAULT_TOL = 1e-9


class ConfigError(ValueError):
    """Inputs that do not fit the selected solver or utility."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EhProfile:
    """M EH blocks of N unit-time communication blocks each."""

    rates: np.ndarray
    blocks_per_eh: int = 1

    def __post_init__(self):
        rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if rates.ndim != 1 or rates.size < 1:
            raise ValueError("rates must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValueError("EH rates must be finite and non-negative")
        if int(self.blocks_per_eh) != self.blocks_per_eh or self.blocks_per_eh < 1:
            raise ValueError("blocks_per_eh must be a positive integer")
        object.__setattr__(self, "rates", _frozen(rates))
        object.__setattr__(self, "blocks_per_eh", int(self.blocks_per_eh))

    @property
    def num_eh_blocks(self) -> int:
        return self.rates.size

    M = num_eh_blocks

    @property
    def N(self) -> int:
        return self.blocks_per_eh

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_eh_blocks, self.blocks_per_eh)

    @property
    def horizon(self) -> int:
        return self.num_eh_blocks * self.blocks_per_eh

    def per_block(self) -> np.ndarray:
        """Energy arriving in each communication block, flat time order."""
        return np.repeat(self.rates, self.blocks_per_eh)

    def cumulative(self) -> np.ndarray:
        """Cumulative harvested energy after each communication block."""
        return np.cumsum(self.per_block())

    def total(self) -> float:
        return float(self.blocks_per_eh * self.rates.sum())


@dataclass(frozen=True)
class ChannelTrace:
    """Realized channel power gains, ``gains[m, n]`` for block (n+1, m+1)."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.ndim != 2:
            raise ValueError("gains must be an M x N grid")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("channel gains must be finite and non-negative")
        object.__setattr__(self, "gains", _frozen(g))

    @classmethod
    def constant(cls, profile: EhProfile, gain: float = 1.0) -> "ChannelTrace":
        return cls(np.full(profile.shape, float(gain)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.gains.shape

    def flat(self) -> np.ndarray:
        return self.gains.ravel()


@dataclass(frozen=True)
class PowerSchedule:
    """Power ``powers[m, n]`` spent in block (n+1, m+1)."""

    powers: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2:
            raise ValueError("powers must be an M x N grid")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("powers must be finite and non-negative")
        object.__setattr__(self, "powers", _frozen(p))

    @classmethod
    def from_flat(cls, flat, profile: EhProfile) -> "PowerSchedule":
        flat = np.maximum(np.asarray(flat, dtype=float), 0.0)
        return cls(flat.reshape(profile.shape))

    @classmethod
    def zeros(cls, profile: EhProfile) -> "PowerSchedule":
        return cls(np.zeros(profile.shape))

    @property
    def shape(self) -> tuple[int, int]:
        return self.powers.shape

    def flat(self) -> np.ndarray:
        return self.powers.ravel()

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.flat())


class Csit(enum.Enum):
    NON_CAUSAL = "noncausal"
    CAUSAL = "causal"
    NONE = "none"


class Esit(enum.Enum):
    NON_CAUSAL = "noncausal"
    CAUSAL = "causal"


@dataclass(frozen=True)
class KnowledgeCase:
    csit: Csit
    esit: Esit

    def __post_init__(self):
        if self.csit is Csit.NON_CAUSAL and self.esit is not Esit.NON_CAUSAL:
            raise ValueError("non-causal CSIT with causal ESIT is not one of the four cases")

    @property
    def number(self) -> int:
        if self.csit is Csit.NON_CAUSAL:
            return 1
        if self.csit is Csit.CAUSAL:
            return 2 if self.esit is Esit.CAUSAL else 3
        return 4

    @classmethod
    def case(cls, number: int, esit: Esit | str = Esit.NON_CAUSAL) -> "KnowledgeCase":
        esit = Esit(esit)
        table = {
            1: (Csit.NON_CAUSAL, Esit.NON_CAUSAL),
            2: (Csit.CAUSAL, Esit.CAUSAL),
            3: (Csit.CAUSAL, Esit.NON_CAUSAL),
            4: (Csit.NONE, esit),
        }
        if number not in table:
            raise ValueError(f"unknown knowledge case {number!r}")
        return cls(*table[number])


# Utility variants -----------------------------------------------------------


@dataclass(frozen=True)
class Throughput:
    """log2(1 + h P) per block with the realized gain known."""


@dataclass(frozen=True)
class NonOutage:
    """1 - Q(P).  ``fading=None`` means the gain is known (indicator utility)."""

    rate: float
    fading: Optional["FadingModel"] = None

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("required rate must be positive")

    @property
    def snr_threshold(self) -> float:
        return 2.0 ** self.rate - 1.0


@dataclass(frozen=True)
class ErgodicThroughput:
    fading: "FadingModel"

    def __post_init__(self):
        if self.fading is None:
            raise ValueError("ergodic throughput needs a fading model")


UtilitySpec = Union[Throughput, NonOutage, ErgodicThroughput]


def served(gain, power, rate: float):
    """Indicator that log2(1 + g p) reaches ``rate`` (relative slack 1e-12)."""
    need = 2.0 ** rate - 1.0
    return np.asarray(gain) * np.asarray(power) >= need * (1.0 - 1e-12)


# Operations -------------------------------------------------------------------


def harvested_by(profile: EhProfile, n: int, m: int) -> float:
    """Energy harvested up to and including block (n, m), both 1-based."""
    if not (1 <= m <= profile.num_eh_blocks and 1 <= n <= profile.N):
        raise IndexError(f"block ({n}, {m}) outside {profile.N} x {profile.num_eh_blocks} grid")
    return float(profile.cumulative()[(m - 1) * profile.N + n - 1])


def _check_shape(schedule: PowerSchedule, profile: EhProfile) -> None:
    if schedule.shape != profile.shape:
        raise ValueError(f"schedule shape {schedule.shape} does not match profile {profile.shape}")


def energy_slack(schedule: PowerSchedule, profile: EhProfile) -> np.ndarray:
    """Harvested minus consumed energy after every block (flat order)."""
    _check_shape(schedule, profile)
    return profile.cumulative() - schedule.cumulative()


def check_feasible(schedule: PowerSchedule, profile: EhProfile, tol: float = DEFAULT_TOL) -> bool:
    return bool(np.all(energy_slack(schedule, profile) >= -tol))


def block_utilities(schedule: PowerSchedule, spec: UtilitySpec,
                    trace: ChannelTrace | None = None) -> np.ndarray:
    """Per-block utility grid U_{n,m}(P(n,m))."""
    p = schedule.powers
    if isinstance(spec, Throughput):
        if trace is None:
            raise ConfigError("throughput utility needs a channel trace")
        if trace.shape != p.shape:
            raise ValueError("trace and schedule shapes differ")
        return np.log2(1.0 + trace.gains * p)
    if isinstance(spec, NonOutage):
        if spec.fading is None:
            if trace is None:
                raise ConfigError("known-CSIT outage utility needs a channel trace")
            return served(trace.gains, p, spec.rate).astype(float)
        from .fading import OutageFn

        ofn = OutageFn(spec.fading, spec.rate, compute_critical=False)
        return 1.0 - ofn.outage_prob(p)
    if isinstance(spec, ErgodicThroughput):
        from .fading import ergodic_rate

        return np.vectorize(lambda x: ergodic_rate(spec.fading, x))(p)
    raise ConfigError(f"unsupported utility {spec!r}")


def evaluate_utility(schedule: PowerSchedule, spec: UtilitySpec,
                     trace: ChannelTrace | None = None) -> float:
    return float(block_utilities(schedule, spec, trace).sum())


def total_bits(gains, powers) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(gains) * np.asarray(powers))))
