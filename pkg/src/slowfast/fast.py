"""The fast process with the slow variable frozen, and diagnostics of its ergodicity.

For fixed ``u`` the fast motion solves ``dv = (A2 v + G(u, v)) ds + dW^{Q2}`` in its
own time ``s`` (no time-scale ratio).  Every routine here accepts replica-batched
fields; observables receive arrays whose trailing axis indexes modes and must
be vectorised accordingly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .reaction import SystemSpec
from .stochastic import OUPropagator, RngStream
from .trajectory import Recorder, Trajectory, step_count

__all__ = [
    "ErgodicEstimate",
    "CorrelationCurve",
    "simulate_frozen",
    "frozen_path",
    "ergodic_mean",
    "contraction_diagnostic",
    "slow_sensitivity_diagnostic",
    "moment_diagnostic",
    "StationaryMoments",
    "stationary_moments",
    "linear_stationary_law",
    "tail_is_flat",
    "correlation_decay",
    "decay_slope",
]

MIN_BATCHES = 20


@dataclass(frozen=True)
class ErgodicEstimate:
    value: np.ndarray
    std_error: np.ndarray
    burn_in: float
    window: float
    n_batches: int = MIN_BATCHES


def _fast_propagator(spec: SystemSpec, h: float) -> OUPropagator:
    return OUPropagator.build(spec.basis_fast.rates, spec.q2.values, h)


def frozen_path(spec: SystemSpec, u, v0, n_steps: int, h: float, stream: RngStream, start: int = 0):
    """Generator over successive frozen-fast states ``v_1, v_2, ...``.

    Step ``i`` (counted from 0) consumes noise block ``start + i`` of ``stream``.
    """
    prop = _fast_propagator(spec, h)
    noisy = bool(np.any(prop.sigma > 0))
    v = np.array(v0, dtype=float)
    u = np.asarray(u, dtype=float)
    for i in range(n_steps):
        z = stream.block(start + i).standard_normal(v.shape) if noisy else None
        v = prop(v, spec.fast_drift(u, v), z)
        yield v


def simulate_frozen(
    spec: SystemSpec,
    u,
    v0,
    horizon: float,
    h: float,
    stream: RngStream,
    record_every: int | None = 1,
    record_steps=None,
) -> Trajectory:
    """Advance the frozen fast process with the exact per-mode OU step."""
    if h > horizon:
        raise ConfigurationError("step exceeds horizon")
    v0 = spec.basis_fast.check(v0)
    spec.basis_slow.check(u)
    n = step_count(horizon, h)
    rec = Recorder(n, h, record_every, record_steps)
    rec(0, v0)
    for i, v in enumerate(frozen_path(spec, u, v0, n, h, stream), start=1):
        rec(i, v)
    return rec.trajectory()


def _batch_stats(samples: np.ndarray, n_batches: int):
    """Mean and batch-means standard error along axis 0."""
    nb = n_batches
    usable = (samples.shape[0] // nb) * nb
    batches = samples[:usable].reshape((nb, usable // nb) + samples.shape[1:]).mean(axis=1)
    return samples.mean(axis=0), batches.std(axis=0, ddof=1) / np.sqrt(nb)


def ergodic_mean(
    spec: SystemSpec,
    u,
    observable: Callable[[np.ndarray], np.ndarray],
    burn_in: float,
    window: float,
    h: float,
    stream: RngStream,
    v0=None,
    n_batches: int = MIN_BATCHES,
) -> ErgodicEstimate:
    """Time average of ``observable`` along one long frozen-fast path.

    The path is discarded for ``burn_in`` time units, then averaged over
    ``window``; the standard error comes from ``n_batches`` contiguous batch means.
    """
    if burn_in <= 0 or window <= 0:
        raise ConfigurationError("burn-in and window must be positive")
    if n_batches < MIN_BATCHES:
        raise ConfigurationError(f"batch-means needs at least {MIN_BATCHES} batches")
    if window < n_batches * h:
        raise ConfigurationError(f"window {window} holds fewer than {n_batches} steps of size {h}")
    n_burn = int(round(burn_in / h))
    n_win = int(round(window / h))
    u = spec.basis_slow.check(u)
    v = np.zeros(u.shape) if v0 is None else spec.basis_fast.check(v0)

    batch_of = (np.arange(n_win) * n_batches) // n_win
    counts = np.bincount(batch_of, minlength=n_batches)
    sums = None
    for i, v in enumerate(frozen_path(spec, u, v, n_burn + n_win, h, stream)):
        if i < n_burn:
            continue
        val = np.asarray(observable(v), dtype=float)
        if sums is None:
            sums = np.zeros((n_batches,) + val.shape)
        sums[batch_of[i - n_burn]] += val
    means = sums / counts.reshape((-1,) + (1,) * (sums.ndim - 1))
    value = sums.sum(axis=0) / n_win
    se = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return ErgodicEstimate(value, se, float(burn_in), float(window), n_batches)


def _shared_noise_pair(spec, ua, va, ub, vb, horizon, h, stream):
    """Two frozen-fast paths driven by identical noise; returns times, gaps."""
    n = step_count(horizon, h)
    prop = _fast_propagator(spec, h)
    noisy = bool(np.any(prop.sigma > 0))
    va = np.array(va, dtype=float)
    vb = np.array(vb, dtype=float)
    gaps = [np.linalg.norm(va - vb, axis=-1)]
    for i in range(n):
        z = stream.block(i).standard_normal(va.shape) if noisy else None
        va = prop(va, spec.fast_drift(ua, va), z)
        vb = prop(vb, spec.fast_drift(ub, vb), z)
        gaps.append(np.linalg.norm(va - vb, axis=-1))
    return np.arange(n + 1) * h, np.asarray(gaps)


def contraction_diagnostic(spec: SystemSpec, u, v1, v2, horizon: float, h: float, stream: RngStream):
    """``(s, |v_s^{u,v1} - v_s^{u,v2}|)`` for two paths sharing all noise.

    Strong dissipativity gives the pathwise envelope ``exp(-2 delta s) |v1 - v2|``.
    """
    u = spec.basis_slow.check(u)
    return _shared_noise_pair(spec, u, v1, u, v2, horizon, h, stream)


def slow_sensitivity_diagnostic(spec: SystemSpec, u1, u2, v, horizon: float, h: float, stream: RngStream):
    """``(s, |v_s^{u1,v} - v_s^{u2,v}|)`` for two shared-noise paths differing only in u."""
    if horizon > spec.horizon:
        raise ConfigurationError("sensitivity horizon must not exceed the system horizon")
    return _shared_noise_pair(spec, u1, v, u2, v, horizon, h, stream)


def moment_diagnostic(
    spec: SystemSpec,
    u,
    v,
    p: int,
    horizon: float,
    h: float,
    replicas: int,
    stream: RngStream,
):
    """Monte Carlo curve ``s -> E|v_s^{u,v}|^p`` with standard errors.

    Returns ``(s, mean, std_error)``.
    """
    if p not in (2, 4):
        raise ConfigurationError("moment order must be 2 or 4")
    if replicas < 50:
        raise ConfigurationError("moment diagnostic needs at least 50 replicas")
    n = step_count(horizon, h)
    v0 = np.broadcast_to(spec.basis_fast.check(v), (replicas, spec.mode_count))
    means, ses = [], []

    def collect(x):
        m = np.linalg.norm(x, axis=-1) ** p
        means.append(m.mean())
        ses.append(m.std(ddof=1) / np.sqrt(replicas))

    collect(v0)
    for x in frozen_path(spec, u, v0, n, h, stream):
        collect(x)
    return np.arange(n + 1) * h, np.asarray(means), np.asarray(ses)


@dataclass(frozen=True)
class StationaryMoments:
    """Per-mode terminal mean and variance across replicas, with standard errors."""

    mean: np.ndarray
    mean_se: np.ndarray
    var: np.ndarray
    var_se: np.ndarray

    def agrees(self, mean, var, n_se: float = 3.0) -> bool:
        ok_m = np.abs(self.mean - mean) <= n_se * self.mean_se
        ok_v = np.abs(self.var - var) <= n_se * self.var_se
        return bool(np.all(ok_m) and np.all(ok_v))


def stationary_moments(
    spec: SystemSpec, u, replicas: int, horizon: float, h: float, stream: RngStream, v0=None
) -> StationaryMoments:
    """Run ``replicas`` frozen-fast paths to ``horizon`` and summarise the final states.

    The variance standard error uses ``sqrt((m4 - s^4) / M)`` with ``m4`` the
    fourth central sample moment.
    """
    if replicas < 50:
        raise ConfigurationError("stationary moments need at least 50 replicas")
    u = spec.basis_slow.check(u)
    v = np.zeros((replicas, spec.mode_count)) if v0 is None else np.broadcast_to(v0, (replicas, spec.mode_count))
    for v in frozen_path(spec, u, v, step_count(horizon, h), h, stream):
        pass
    mean = v.mean(axis=0)
    dev = v - mean
    var = dev.var(axis=0, ddof=1)
    m4 = np.mean(dev**4, axis=0)
    return StationaryMoments(
        mean,
        v.std(axis=0, ddof=1) / np.sqrt(replicas),
        var,
        np.sqrt(np.maximum(m4 - var**2, 0.0) / replicas),
    )


def linear_stationary_law(spec: SystemSpec, u):
    """Per-mode mean ``c u_k / (alpha_k + lambda - d)`` and variance ``q2_k / (2 (alpha_k + lambda - d))``."""
    if spec.linear is None:
        raise ConfigurationError("closed-form stationary law needs the linear system")
    rate = spec.basis_fast.rates - spec.linear.d
    return spec.linear.c * np.asarray(u, dtype=float) / rate, spec.q2.values / (2.0 * rate)


def tail_is_flat(times, means, std_errors, s_min: float, n_se: float = 3.0) -> bool:
    """True when the curve is finite and its first and last tail points agree within
    ``n_se`` combined standard errors.

    Comparing the two ends of the tail window (``s >= s_min``) detects residual
    drift with a single test; a pointwise check over every grid time would fail
    by chance on long, finely sampled tails.
    """
    times = np.asarray(times)
    means = np.asarray(means)
    ses = np.asarray(std_errors)
    tail = np.flatnonzero(times >= s_min)
    if tail.size < 2:
        raise ConfigurationError("need at least two points in the tail window")
    if not np.all(np.isfinite(means)):
        return False
    a, b = tail[0], tail[-1]
    return bool(abs(means[b] - means[a]) <= n_se * np.hypot(ses[a], ses[b]))


@dataclass(frozen=True)
class CorrelationCurve:
    lags: np.ndarray
    cov: np.ndarray
    std_error: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.cov)


def correlation_decay(
    spec: SystemSpec,
    u,
    v,
    phi: Callable[[np.ndarray], np.ndarray],
    psi: Callable[[np.ndarray], np.ndarray],
    lags,
    h: float,
    window: float,
    stream: RngStream,
    burn_in: float | None = None,
    n_batches: int = MIN_BATCHES,
) -> CorrelationCurve:
    """Lagged covariances ``Cov(phi(v_t), psi(v_{t+s}))`` along one stationary path.

    Scalar observables only.  Burn-in defaults to ``10 / delta``.  Standard
    errors are batch means of the lag products.
    """
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0):
        raise ConfigurationError("lags must be non-negative")
    if window < 100 * lags.max():
        raise ConfigurationError("window must be at least 100 times the largest lag")
    if burn_in is None:
        burn_in = 10.0 / spec.delta
    lag_steps = np.rint(lags / h).astype(int)
    n_burn = int(round(burn_in / h))
    n_win = int(round(window / h))
    max_lag = int(lag_steps.max())
    u = spec.basis_slow.check(u)
    x = np.empty(n_win + max_lag)
    y = np.empty(n_win + max_lag)
    for i, vi in enumerate(frozen_path(spec, u, v, n_burn + n_win + max_lag, h, stream)):
        j = i - n_burn
        if j >= 0:
            x[j] = phi(vi)
            y[j] = psi(vi)
    x0 = x[:n_win] - x[:n_win].mean()
    yc = y - y[:n_win].mean()
    covs, ses = [], []
    for lag in lag_steps:
        prod = x0 * yc[lag : lag + n_win]
        m, se = _batch_stats(prod, n_batches)
        covs.append(m)
        ses.append(se)
    return CorrelationCurve(lags, np.asarray(covs), np.asarray(ses))


def decay_slope(curve: CorrelationCurve, floor: float = 5.0) -> float:
    """Least-squares slope of ``log|cov|`` against lag over points above ``floor`` SEs."""
    keep = curve.magnitude > floor * curve.std_error
    if keep.sum() < 2:
        raise ConfigurationError("fewer than two lags rise above the noise floor")
    slope, _ = np.polyfit(curve.lags[keep], np.log(curve.magnitude[keep]), 1)
    return float(slope)
