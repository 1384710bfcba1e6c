"""Fading gain distributions, outage functions and ergodic rates.

All models describe the channel *power* gain h >= 0.  Each family exposes
both ``cdf`` and ``sf`` so that small tail probabilities on either side are
computed without cancellation; ``ppf``/``sample`` are inverse-CDF based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special, stats

LN2 = math.log(2.0)

# critical-point scan
SCAN_LO, SCAN_HI, SCAN_PER_DECADE = 1e-6, 1e6, 40
_REL_STEP = 1e-4
_NOISE_REL = 1e-11


def _check_positive(**params):
    for name, value in params.items():
        if not (np.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be a positive finite number, got {value!r}")


class FadingModel:
    """Base class; subclasses are frozen dataclasses."""

    def cdf(self, x):
        raise NotImplementedError

    def sf(self, x):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.ppf(rng.random(size))

    def to_dict(self) -> dict:
        d = {"family": type(self).__name__.lower()}
        d.update(self.__dict__)
        return d


@dataclass(frozen=True)
class Rayleigh(FadingModel):
    mean_gain: float = 1.0

    def __post_init__(self):
        _check_positive(mean_gain=self.mean_gain)

    def cdf(self, x):
        return -np.expm1(-np.asarray(x, dtype=float) / self.mean_gain)

    def sf(self, x):
        return np.exp(-np.asarray(x, dtype=float) / self.mean_gain)

    def ppf(self, u):
        return -self.mean_gain * np.log1p(-np.asarray(u, dtype=float))

    @property
    def mean(self) -> float:
        return self.mean_gain


@dataclass(frozen=True)
class Weibull(FadingModel):
    shape: float
    scale: float = 1.0

    def __post_init__(self):
        _check_positive(shape=self.shape, scale=self.scale)

    def cdf(self, x):
        return -np.expm1(-(np.asarray(x, dtype=float) / self.scale) ** self.shape)

    def sf(self, x):
        return np.exp(-(np.asarray(x, dtype=float) / self.scale) ** self.shape)

    def ppf(self, u):
        return self.scale * (-np.log1p(-np.asarray(u, dtype=float))) ** (1.0 / self.shape)

    @property
    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)


@dataclass(frozen=True)
class Nakagami(FadingModel):
    """Nakagami-m amplitude, so the power gain is Gamma(m, mean/m)."""

    m_param: float
    mean_gain: float = 1.0

    def __post_init__(self):
        _check_positive(m_param=self.m_param, mean_gain=self.mean_gain)

    def _z(self, x):
        return self.m_param * np.asarray(x, dtype=float) / self.mean_gain

    def cdf(self, x):
        return special.gammainc(self.m_param, self._z(x))

    def sf(self, x):
        return special.gammaincc(self.m_param, self._z(x))

    def ppf(self, u):
        return special.gammaincinv(self.m_param, np.asarray(u, dtype=float)) * self.mean_gain / self.m_param

    @property
    def mean(self) -> float:
        return self.mean_gain


@dataclass(frozen=True)
class Rician(FadingModel):
    """Rician amplitude with K-factor; h * 2(K+1)/mean is noncentral chi2(2, 2K)."""

    k_factor: float
    mean_gain: float = 1.0

    def __post_init__(self):
        _check_positive(k_factor=self.k_factor, mean_gain=self.mean_gain)

    def _z(self, x):
        return 2.0 * (self.k_factor + 1.0) * np.asarray(x, dtype=float) / self.mean_gain

    def cdf(self, x):
        return stats.ncx2.cdf(self._z(x), 2, 2.0 * self.k_factor)

    def sf(self, x):
        return stats.ncx2.sf(self._z(x), 2, 2.0 * self.k_factor)

    def ppf(self, u):
        z = stats.ncx2.ppf(np.asarray(u, dtype=float), 2, 2.0 * self.k_factor)
        return z * self.mean_gain / (2.0 * (self.k_factor + 1.0))

    @property
    def mean(self) -> float:
        return self.mean_gain


@dataclass(frozen=True)
class DoubleRayleigh(FadingModel):
    """Product of two independent exponential gains, each of mean sqrt(mean_gain).

    With u ~ Exp(1), P[h > x] = E[exp(-x / (mean * u))]; both tails are
    evaluated by one-dimensional quadrature over u.
    """

    mean_gain: float = 1.0

    def __post_init__(self):
        _check_positive(mean_gain=self.mean_gain)

    def _quad(self, x: float, tail: bool) -> float:
        if x <= 0:
            return 1.0 if tail else 0.0
        if not np.isfinite(x):
            return 0.0 if tail else 1.0
        a = x / self.mean_gain
        if tail:
            f = lambda u: math.exp(-u - a / u) if u > 0 else 0.0
        else:
            f = lambda u: math.exp(-u) * -math.expm1(-a / u) if u > 0 else math.exp(-u)
        split = math.sqrt(a)
        opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200)
        lo = integrate.quad(f, 0.0, split, **opts)[0]
        hi = integrate.quad(f, split, np.inf, **opts)[0]
        return lo + hi

    def cdf(self, x):
        return np.vectorize(lambda v: self._quad(float(v), tail=False), otypes=[float])(x)

    def sf(self, x):
        return np.vectorize(lambda v: self._quad(float(v), tail=True), otypes=[float])(x)

    def ppf(self, u):
        raise NotImplementedError("double Rayleigh samples from two exponential inverse CDFs")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        s = math.sqrt(self.mean_gain)
        u1 = rng.random(size)
        u2 = rng.random(size)
        return (-s * np.log1p(-u1)) * (-s * np.log1p(-u2))

    @property
    def mean(self) -> float:
        return self.mean_gain


@dataclass(frozen=True)
class PointMass(FadingModel):
    """Deterministic gain (AWGN)."""

    gain: float = 1.0

    def __post_init__(self):
        _check_positive(gain=self.gain)

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.gain).astype(float)

    def sf(self, x):
        return (np.asarray(x, dtype=float) < self.gain).astype(float)

    def ppf(self, u):
        return np.full(np.shape(u), self.gain)

    @property
    def mean(self) -> float:
        return self.gain


FAMILIES = {
    "rayleigh": Rayleigh,
    "weibull": Weibull,
    "nakagami": Nakagami,
    "rician": Rician,
    "doublerayleigh": DoubleRayleigh,
    "pointmass": PointMass,
}


def fading_from_dict(d: dict) -> FadingModel:
    d = dict(d)
    family = str(d.pop("family")).lower().replace("_", "").replace("-", "")
    if family not in FAMILIES:
        raise ValueError(f"unknown fading family {family!r}")
    return FAMILIES[family](**d)


def gain_cdf(fading: FadingModel, x):
    """P[h <= x]."""
    if np.any(np.asarray(x) < 0):
        raise ValueError("gain must be non-negative")
    return fading.cdf(x)


# Outage ---------------------------------------------------------------------


@dataclass(frozen=True)
class OutageFn:
    """Q(P) = P[log2(1 + h P) < r] for a no-CSIT transmitter.

    ``critical_point`` is 0 when Q is convex over the scan range, the
    concave-to-convex switch point otherwise, and ``inf`` when no convex
    region is found below the scan limit.
    """

    fading: FadingModel
    rate: float
    compute_critical: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("required rate must be positive")
        if self.compute_critical:
            _ = self.critical_point

    @property
    def threshold(self) -> float:
        return 2.0 ** self.rate - 1.0

    def outage_prob(self, p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            x = np.where(p > 0, self.threshold / np.where(p > 0, p, 1.0), np.inf)
        out = np.where(p > 0, self.fading.cdf(np.where(p > 0, x, 0.0)), 1.0)
        return out if out.ndim else float(out)

    __call__ = outage_prob

    def success_prob(self, p):
        p = np.asarray(p, dtype=float)
        x = self.threshold / np.where(p > 0, p, 1.0)
        out = np.where(p > 0, self.fading.sf(x), 0.0)
        return out if out.ndim else float(out)

    def curvature_sign(self, p: float, noise_rel: float = _NOISE_REL) -> int:
        """Sign of Q'' at ``p`` from a central second difference, 0 if lost in noise."""
        h = _REL_STEP * p
        pts = np.array([p - h, p, p + h])
        q_mid = float(self.outage_prob(p))
        if q_mid <= 0.5:
            f = np.asarray(self.outage_prob(pts), dtype=float)
            flip = 1
        else:
            f = np.asarray(self.success_prob(pts), dtype=float)
            flip = -1
        d2 = f[0] - 2.0 * f[1] + f[2]
        if f[1] == 0.0 or abs(d2) <= noise_rel * abs(f[1]):
            return 0
        return flip * (1 if d2 > 0 else -1)

    @cached_property
    def critical_point(self) -> float:
        return _find_critical_point(self)

    @property
    def convex(self) -> bool:
        """True when Q is convex on all of (0, inf), i.e. no critical point."""
        return self.critical_point == 0.0


def _find_critical_point(ofn: OutageFn) -> float:
    decades = math.log10(SCAN_HI / SCAN_LO)
    grid = np.logspace(math.log10(SCAN_LO), math.log10(SCAN_HI), int(decades * SCAN_PER_DECADE) + 1)
    signs = np.array([ofn.curvature_sign(float(p)) for p in grid])
    neg = np.flatnonzero(signs < 0)
    if neg.size == 0:
        return 0.0
    i = int(neg[-1])
    pos_after = np.flatnonzero(signs[i + 1:] > 0)
    if pos_after.size == 0:
        return math.inf
    a, b = float(grid[i]), float(grid[i + 1 + pos_after[0]])
    for _ in range(200):
        if b - a <= 1e-10 * b + 1e-15:
            break
        mid = 0.5 * (a + b)
        s = ofn.curvature_sign(mid, noise_rel=0.0)
        if s < 0:
            a = mid
        elif s > 0:
            b = mid
        else:
            return mid
    return 0.5 * (a + b)


def outage_prob(ofn: OutageFn, p):
    if np.any(np.asarray(p) < 0):
        raise ValueError("power must be non-negative")
    return ofn.outage_prob(p)


def critical_point(ofn: OutageFn) -> float:
    return ofn.critical_point


# Ergodic rate -----------------------------------------------------------------


def _tail_integral(fading: FadingModel, kernel) -> float:
    # E[g(h)] = g(0) + int_0^inf g'(x) P[h > x] dx, split at the mean scale
    f = lambda x: kernel(x) * float(fading.sf(x))
    opts = dict(epsabs=1e-12, epsrel=1e-12, limit=400)
    knot = fading.mean
    lo = integrate.quad(f, 0.0, knot, **opts)[0]
    hi = integrate.quad(f, knot, np.inf, **opts)[0]
    return lo + hi


def ergodic_rate(fading: FadingModel, p: float) -> float:
    """E[log2(1 + h p)] in bits/s/Hz."""
    p = float(p)
    if p < 0:
        raise ValueError("power must be non-negative")
    if p == 0.0:
        return 0.0
    if isinstance(fading, PointMass):
        return math.log2(1.0 + fading.gain * p)
    return _tail_integral(fading, lambda x: p / (1.0 + p * x)) / LN2


def ergodic_rate_derivative(fading: FadingModel, p: float) -> float:
    """d/dp E[log2(1 + h p)] = E[h / (1 + h p)] / ln 2."""
    p = float(p)
    if isinstance(fading, PointMass):
        return fading.gain / ((1.0 + fading.gain * p) * LN2)
    return _tail_integral(fading, lambda x: 1.0 / (1.0 + p * x) ** 2) / LN2
