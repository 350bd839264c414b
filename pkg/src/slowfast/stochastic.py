"""Covariance spectra, counter-addressed random streams and exact OU updates.

Noise is diagonal in the sine eigenbasis, so each mode of a stochastic
convolution is a scalar Ornstein-Uhlenbeck process and can be advanced exactly.

Random numbers come from Philox keyed by ``(seed, stream_id)``.  A stream is
split into *blocks* addressed by up to two integers that are written into the
high words of the Philox counter, so any block can be regenerated without
replaying the ones before it.  This is what lets runs at different time-scale
ratios read the same slow-noise increments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .spectral import EigenBasis

__all__ = [
    "CovarianceSpectrum",
    "RngStream",
    "spawn_stream",
    "stream_id",
    "ou_step",
    "ou_noise_variance",
    "OUPropagator",
    "DyadicOUNoise",
    "HsDecayReport",
    "hs_decay_profile",
]

_MASK64 = (1 << 64) - 1

# stream kinds, packed in the top 16 bits of a stream id
SLOW_NOISE = 1
FAST_NOISE = 2
FROZEN_NOISE = 3
AUX_NOISE = 4


def stream_id(kind: int, index: int = 0) -> int:
    """Pack a stream kind and a 48-bit index into one 64-bit id."""
    if not 0 <= index < (1 << 48):
        raise ConfigurationError(f"stream index {index} out of range")
    return ((kind & 0xFFFF) << 48) | index


@dataclass(frozen=True)
class CovarianceSpectrum:
    """Eigenvalues ``q_k`` of a covariance operator diagonal in the sine basis."""

    values: np.ndarray
    invertible: bool = False

    def __post_init__(self):
        q = np.array(self.values, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise ConfigurationError("covariance spectrum must be a non-empty 1-D array")
        if np.any(~np.isfinite(q)) or np.any(q < 0):
            raise ConfigurationError("covariance eigenvalues must be finite and non-negative")
        if self.invertible and np.any(q <= 0):
            raise ConfigurationError("an invertible covariance needs strictly positive eigenvalues")
        q.setflags(write=False)
        object.__setattr__(self, "values", q)

    @classmethod
    def white(cls, n: int, scale: float = 1.0, invertible: bool = True) -> "CovarianceSpectrum":
        return cls(np.full(n, float(scale)), invertible=invertible)

    def __len__(self):
        return self.values.size

    def scaled(self, factor: float) -> "CovarianceSpectrum":
        return CovarianceSpectrum(self.values * factor, invertible=self.invertible)


@dataclass(frozen=True)
class RngStream:
    """A reproducible Gaussian stream, a pure function of ``(seed, stream_id, index)``."""

    seed: int
    stream_id: int

    def _key(self) -> np.ndarray:
        return np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)

    def block(self, i: int = 0, j: int = 0) -> np.random.Generator:
        """Generator positioned at the start of block ``(i, j)``."""
        counter = np.array([0, 0, i & _MASK64, j & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key(), counter=counter))

    def normals(self, size) -> np.ndarray:
        """The leading standard normals of the stream (block ``(0, 0)``)."""
        return self.block().standard_normal(size)

    def child(self, index: int) -> "RngStream":
        """Derived stream whose id mixes in ``index`` (used for auxiliary per-task streams)."""
        mixed = np.random.SeedSequence([self.stream_id & _MASK64, index]).generate_state(1, np.uint64)[0]
        return RngStream(self.seed, int(mixed))


def spawn_stream(seed: int, stream_id: int) -> RngStream:
    return RngStream(int(seed), int(stream_id))


def ou_noise_variance(rate, q, h):
    """Variance of ``int_0^h e^{-rate (h - s)} dW_s`` for a mode with covariance ``q``."""
    rate = np.asarray(rate, dtype=float)
    return np.asarray(q, dtype=float) * (-np.expm1(-2.0 * rate * h)) / (2.0 * rate)


def ou_step(prev, rate, forcing, q, h, draw):
    """One exact mild-form step of ``dx = (-rate x + forcing) dt + sqrt(q) dW``.

    The forcing is frozen over the step; decay and noise are exact in law.
    """
    rate = np.asarray(rate, dtype=float)
    decay = np.exp(-rate * h)
    weight = -np.expm1(-rate * h) / rate
    sigma = np.sqrt(ou_noise_variance(rate, q, h))
    return decay * prev + weight * forcing + sigma * draw


@dataclass(frozen=True)
class OUPropagator:
    """Precomputed per-mode coefficients of :func:`ou_step` for a fixed step."""

    decay: np.ndarray
    weight: np.ndarray
    sigma: np.ndarray

    @classmethod
    def build(cls, rate, q, h) -> "OUPropagator":
        rate = np.asarray(rate, dtype=float)
        return cls(
            decay=np.exp(-rate * h),
            weight=-np.expm1(-rate * h) / rate,
            sigma=np.sqrt(ou_noise_variance(rate, q, h)),
        )

    def __call__(self, prev, forcing, draw=None):
        out = self.decay * prev + self.weight * forcing
        if draw is not None:
            out = out + self.sigma * draw
        return out


class DyadicOUNoise:
    """Exact stochastic-convolution increments on a dyadically refined slot grid.

    Time ``[0, n_slots * slot_width]`` is cut into slots.  Level ``l`` splits each
    slot into ``2**l`` equal steps.  The increment of a step ``[t, t + dt]`` is
    ``int_t^{t+dt} e^{-rate (t + dt - s)} dW_s`` per mode.  Level 0 is drawn
    directly; every finer level bisects the previous one by sampling from the
    exact conditional law of the first half given the whole, so the increments
    at different levels are pathwise consistent (one realisation of W).

    Draws for slot ``j``, level ``l`` live in stream block ``(j, l)`` with the
    replica axis outermost, so replica ``r`` sees the same numbers whatever the
    total replica count.
    """

    def __init__(self, stream: RngStream, rates, q, slot_width: float, n_slots: int, replicas: int):
        self.stream = stream
        self.rates = np.asarray(rates, dtype=float)
        self.q = np.asarray(q, dtype=float)
        if self.rates.shape != self.q.shape:
            raise ConfigurationError("rates and covariance spectrum differ in length")
        if slot_width <= 0 or n_slots < 1 or replicas < 1:
            raise ConfigurationError("slot grid needs positive width, slot count and replicas")
        self.slot_width = float(slot_width)
        self.n_slots = int(n_slots)
        self.replicas = int(replicas)

    @property
    def mode_count(self) -> int:
        return self.rates.size

    def step_width(self, level: int) -> float:
        return self.slot_width / (1 << level)

    def slot_increments(self, slot: int, level: int) -> np.ndarray:
        """Increments of the ``2**level`` steps inside ``slot``; shape ``(2**level, M, N)``."""
        if not 0 <= slot < self.n_slots:
            raise IndexError(f"slot {slot} outside [0, {self.n_slots})")
        m, n = self.replicas, self.mode_count
        z = self.stream.block(slot, 0).standard_normal((m, n))
        inc = (np.sqrt(ou_noise_variance(self.rates, self.q, self.slot_width)) * z)[None]
        width = self.slot_width
        for lvl in range(1, level + 1):
            half = width / 2.0
            e = np.exp(-self.rates * half)
            gain = e / (1.0 + e * e)
            cond_sd = np.sqrt(ou_noise_variance(self.rates, self.q, half) / (1.0 + e * e))
            parents = inc.shape[0]
            z = self.stream.block(slot, lvl).standard_normal((m, parents, n)).transpose(1, 0, 2)
            first = gain * inc + cond_sd * z
            second = inc - e * first
            inc = np.empty((2 * parents, m, n))
            inc[0::2] = first
            inc[1::2] = second
            width = half
        return inc

    def iter_steps(self, level: int):
        """Yield the per-step increments, ``(M, N)`` each, over the whole horizon."""
        for slot in range(self.n_slots):
            yield from self.slot_increments(slot, level)


@dataclass(frozen=True)
class HsDecayReport:
    t_grid: np.ndarray
    hs_values: np.ndarray
    fitted_gamma: float
    fit_r2: float


def hs_decay_profile(basis: EigenBasis, cov: CovarianceSpectrum, t_grid) -> HsDecayReport:
    """Hilbert-Schmidt norm of ``e^{tA} Q^{1/2}`` on a grid of times in (0, 1].

    The blow-up exponent gamma is minus the least-squares slope of log norm
    against log t.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise ConfigurationError("empty time grid")
    if np.any(t <= 0) or np.any(t > 1) or np.any(np.diff(t) <= 0):
        raise ConfigurationError("time grid must be strictly increasing inside (0, 1]")
    if len(cov) != basis.mode_count:
        raise ConfigurationError("covariance spectrum length differs from basis size")
    rates = basis.rates
    hs = np.sqrt(np.exp(-2.0 * np.outer(t, rates)) @ cov.values)
    if t.size < 2:
        return HsDecayReport(t, hs, float("nan"), float("nan"))
    x, y = np.log(t), np.log(hs)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return HsDecayReport(t, hs, float(-slope), float(r2))
