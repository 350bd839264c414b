"""Averaged drift and the averaged slow equation.

The averaged drift is ``Fbar(u) = int F(u, v) mu^u(dv)`` with ``mu^u`` the invariant
law of the frozen fast process.  For the linear system that law is Gaussian with
per-mode mean ``c u_k / (alpha_k + lambda - d)``, which gives a closed form; for
anything else it is estimated by a long-time average.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PrecisionError
from .fast import ergodic_mean
from .reaction import SystemSpec
from .stochastic import DyadicOUNoise, OUPropagator, RngStream
from .trajectory import Recorder, Trajectory, step_count

__all__ = [
    "AveragedDrift",
    "averaged_drift_analytic",
    "averaged_drift_ergodic",
    "averaged_gain",
    "solve_averaged",
    "lipschitz_probe",
]


def _require_linear(spec: SystemSpec):
    if spec.linear is None:
        raise ConfigurationError(f"system {spec.reactions.name!r} has no closed-form averaged drift")
    return spec.linear


def averaged_gain(spec: SystemSpec) -> np.ndarray:
    """Per-mode multiplier of the linear averaged drift, ``a + b c / (alpha_k + lambda - d)``."""
    lin = _require_linear(spec)
    denom = spec.basis_fast.rates - lin.d
    if np.any(denom <= 0):
        raise ConfigurationError("fast linear part is not dissipative in every mode")
    return lin.a + lin.b * lin.c / denom


def averaged_drift_analytic(spec: SystemSpec, u) -> np.ndarray:
    u = spec.basis_slow.check(u)
    return averaged_gain(spec) * u


def averaged_drift_ergodic(
    spec: SystemSpec,
    u,
    burn_in: float,
    window: float,
    h: float,
    stream: RngStream,
    n_batches: int = 20,
):
    """Estimate ``Fbar(u)`` mode by mode from one long frozen-fast path.

    Returns ``(value, std_error)``, both with the shape of ``u``.
    """
    u = spec.basis_slow.check(u)
    est = ergodic_mean(
        spec, u, lambda v: spec.slow_drift(u, v), burn_in, window, h, stream, n_batches=n_batches
    )
    return est.value, est.std_error


@dataclass
class AveragedDrift:
    """Callable averaged drift in ``"analytic"`` or ``"ergodic"`` mode.

    Ergodic evaluations reuse ``stream`` for every input, so the map is
    deterministic.  With ``cache_step`` set, inputs are rounded to that grid to
    form cache keys; the cache is off by default.
    """

    spec: SystemSpec
    mode: str = "analytic"
    burn_in: float = 20.0
    window: float = 200.0
    h_fast: float = 1e-2
    stream: RngStream | None = None
    n_batches: int = 20
    cache_step: float | None = None
    max_rel_error: float = 0.1
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("analytic", "ergodic"):
            raise ConfigurationError(f"unknown drift mode {self.mode!r}")
        if self.mode == "analytic":
            self._gain = averaged_gain(self.spec)
        elif self.stream is None:
            raise ConfigurationError("ergodic drift needs a random stream")

    def evaluate(self, u):
        """Return ``(value, std_error)``; the error is zero in analytic mode."""
        u = self.spec.basis_slow.check(u)
        if self.mode == "analytic":
            return self._gain * u, np.zeros_like(u)
        key = None
        if self.cache_step:
            key = np.round(u / self.cache_step).astype(np.int64).tobytes() + str(u.shape).encode()
            if key in self._cache:
                return self._cache[key]
        out = averaged_drift_ergodic(
            self.spec, u, self.burn_in, self.window, self.h_fast, self.stream, self.n_batches
        )
        if key is not None:
            self._cache[key] = out
        return out

    def __call__(self, u) -> np.ndarray:
        return self.evaluate(u)[0]

    def checked(self, u, where: str = "") -> np.ndarray:
        """Evaluate and raise :class:`PrecisionError` if the ergodic error is too large."""
        value, se = self.evaluate(u)
        if self.mode == "ergodic":
            scale = np.maximum(np.linalg.norm(value, axis=-1), 1e-12)
            if np.any(np.linalg.norm(se, axis=-1) > self.max_rel_error * scale):
                raise PrecisionError(f"averaged drift too noisy{where}; lengthen the ergodic window")
        return value


def solve_averaged(
    spec: SystemSpec,
    drift: AveragedDrift,
    u0,
    h: float,
    noise: DyadicOUNoise | None = None,
    level: int = 0,
    record_every: int | None = 1,
    record_steps=None,
) -> Trajectory:
    """Exponential-Euler integration of the averaged equation.

    Each step decays mode k by ``exp(-alpha_k h)``, adds the phi1-weighted drift and
    the exact stochastic-convolution increment supplied by ``noise`` at ``level``
    (``noise=None`` integrates the noiseless equation).
    """
    u = spec.basis_slow.check(u0).astype(float)
    n = step_count(spec.horizon, h)
    if noise is not None:
        if not np.isclose(noise.step_width(level), h, rtol=1e-12):
            raise ConfigurationError("noise level does not match the step size")
        if noise.n_slots * (1 << level) != n:
            raise ConfigurationError("noise slot grid does not cover the horizon")
        u = np.broadcast_to(u, (noise.replicas, spec.mode_count)).copy()
        increments = noise.iter_steps(level)
    prop = OUPropagator.build(spec.basis_slow.rates, spec.q1.values, h)
    rec = Recorder(n, h, record_every, record_steps)
    rec(0, u)
    for i in range(1, n + 1):
        u = prop(u, drift.checked(u, f" at step {i}"))
        if noise is not None:
            u = u + next(increments)
        rec(i, u)
    return rec.trajectory()


def lipschitz_probe(drift: AveragedDrift, pairs) -> float:
    """Largest observed ``|Fbar(u) - Fbar(u')| / |u - u'|`` over the given pairs."""
    ratios = []
    for u, w in pairs:
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        gap = np.linalg.norm(u - w)
        if gap == 0:
            continue
        ratios.append(np.linalg.norm(drift(u) - drift(w)) / gap)
    if not ratios:
        raise ConfigurationError("every probe pair is degenerate")
    return float(max(ratios))
