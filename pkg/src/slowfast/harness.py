"""Experiment orchestration: strong-error sweeps, moment and increment diagnostics.

Replicas are processed in fixed-size chunks.  Chunk ``b`` draws its noise from
stream block ``b`` (see :func:`slowfast.coupled.plan_noise`), so results depend
on the replica count but never on how many worker threads are used.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .averaging import AveragedDrift
from .config import ExperimentConfig
from .coupled import (
    _initial_states,
    _Stepper,
    check_step_guard,
    default_initial_condition,
    discretization_gap,
    plan_noise,
    simulate_coupled,
)
from .errors import ConfigurationError
from .reaction import SystemSpec
from .spectral import EigenBasis
from .stats import PowerFit, mean_se, rate_fit
from .stochastic import FROZEN_NOISE, CovarianceSpectrum, RngStream, stream_id

__all__ = [
    "REPLICA_CHUNK",
    "RateEstimate",
    "MomentReport",
    "IncrementReport",
    "make_drift",
    "strong_error_samples",
    "strong_error",
    "run_rate",
    "rate_fit",
    "moment_uniformity",
    "time_increment_check",
    "gaussian_increment_variance",
    "GapReport",
    "gap_slope",
    "RATE_BAND",
    "RATE_MIN_R2",
]

RATE_BAND = (0.8, 1.2)
RATE_MIN_R2 = 0.95

REPLICA_CHUNK = 50
# mean-square gaps at or below this level are treated as exact agreement
ROUND_OFF_FLOOR = 1e-20


def _chunks(replicas: int):
    """``(block_index, size)`` pairs covering ``replicas``."""
    out, b = [], 0
    while replicas > 0:
        out.append((b, min(REPLICA_CHUNK, replicas)))
        replicas -= REPLICA_CHUNK
        b += 1
    return out


def _map_chunks(fn, replicas: int, threads: int = 1):
    chunks = _chunks(replicas)
    if threads <= 1 or len(chunks) == 1:
        parts = [fn(b, m) for b, m in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: fn(*c), chunks))
    return np.concatenate(parts, axis=0)


def make_drift(config: ExperimentConfig, spec: SystemSpec | None = None) -> AveragedDrift:
    """Averaged drift as configured under ``drift:``; ergodic mode uses a frozen-noise stream."""
    spec = config.build_spec() if spec is None else spec
    opts = dict(config.drift)
    mode = opts.pop("mode", "analytic")
    stream = RngStream(config.seed, stream_id(FROZEN_NOISE, 0)) if mode == "ergodic" else None
    return AveragedDrift(spec, mode=mode, stream=stream, **opts)


def _initial(config: ExperimentConfig, spec: SystemSpec, u0, v0):
    du, dv = default_initial_condition(spec, config.alpha)
    return (du if u0 is None else u0), (dv if v0 is None else v0)


def strong_error_samples(
    config: ExperimentConfig,
    eps: float,
    spec: SystemSpec | None = None,
    drift: AveragedDrift | None = None,
    u0=None,
    v0=None,
    threads: int = 1,
) -> np.ndarray:
    """Per-replica ``sup_t |U^eps_t - U_t|^2`` over the micro-step grid.

    The coupled pair and the averaged equation advance in lockstep and add the
    very same slow-noise increment at every step.
    """
    spec = config.build_spec() if spec is None else spec
    drift = make_drift(config, spec) if drift is None else drift
    u0, v0 = _initial(config, spec, u0, v0)
    h = config.step(eps)
    check_step_guard(eps, h)
    stepper = _Stepper(spec, eps, h)

    def chunk(block, m):
        plan = plan_noise(spec, config.seed, eps, h, m, config.slot_width, replica_block=block)
        u, v = _initial_states(spec, u0, v0, m)
        ubar = u.copy()
        sup = np.zeros(m)
        for i, (inc, z) in enumerate(plan.increments(spec)):
            fbar = drift.checked(ubar, f" at step {i}")
            u, v = stepper.step(u, v, inc, z)
            ubar = stepper.slow_step(ubar, fbar, inc)
            np.maximum(sup, np.sum((u - ubar) ** 2, axis=-1), out=sup)
        return sup

    return _map_chunks(chunk, config.replicas, threads)


def strong_error(config: ExperimentConfig, eps: float, **kwargs):
    """``(mse, std_error)`` of ``sup_t |U^eps_t - U_t|^2`` across replicas."""
    mse, se = mean_se(strong_error_samples(config, eps, **kwargs))
    return float(mse), float(se)


@dataclass(frozen=True)
class RateEstimate:
    epsilons: np.ndarray
    mse: np.ndarray
    std_errors: np.ndarray
    replicas: int
    fit: PowerFit
    seed: int
    config_hash: str
    wall_time: float = field(compare=False, default=0.0)

    def rows(self):
        return [
            {"epsilon": e, "mse": m, "std_error": s, "replicas": self.replicas}
            for e, m, s in zip(self.epsilons.tolist(), self.mse.tolist(), self.std_errors.tolist())
        ]


def run_rate(config: ExperimentConfig, threads: int = 1, progress=None) -> RateEstimate:
    """Strong-error sweep over the configured eps grid plus the log-log fit."""
    if config.drift.get("mode", "analytic") != "analytic":
        raise ConfigurationError("rate runs need drift.mode = analytic")
    start = time.perf_counter()
    spec = config.build_spec()
    drift = make_drift(config, spec)
    mse, ses = [], []
    for eps in config.epsilons:
        m, s = strong_error(config, eps, spec=spec, drift=drift, threads=threads)
        mse.append(m)
        ses.append(s)
        if progress is not None:
            progress(eps, m, s)
    mse = np.asarray(mse)
    if np.any(mse <= ROUND_OFF_FLOOR):
        raise ConfigurationError("a strong error is zero to round-off; the rate is undefined (is F independent of v?)")
    fit = rate_fit(config.epsilons, mse)
    return RateEstimate(
        epsilons=np.asarray(config.epsilons, dtype=float),
        mse=mse,
        std_errors=np.asarray(ses),
        replicas=config.replicas,
        fit=fit,
        seed=config.seed,
        config_hash=config.fingerprint(),
        wall_time=time.perf_counter() - start,
    )


@dataclass(frozen=True)
class MomentReport:
    epsilons: np.ndarray
    sup_u: np.ndarray
    sup_u_se: np.ndarray
    sup_v: np.ndarray
    sup_v_se: np.ndarray
    n_se: float = 4.0

    @staticmethod
    def _uniform(values, ses, n_se):
        centre = values.mean()
        centre_se = np.sqrt(np.sum(ses**2)) / len(values)
        return bool(np.all(np.abs(values - centre) <= n_se * np.sqrt(ses**2 + centre_se**2)))

    @property
    def uniform_u(self) -> bool:
        return self._uniform(self.sup_u, self.sup_u_se, self.n_se)

    @property
    def uniform_v(self) -> bool:
        return self._uniform(self.sup_v, self.sup_v_se, self.n_se)

    @property
    def passed(self) -> bool:
        return self.uniform_u and self.uniform_v


def moment_uniformity(
    config: ExperimentConfig,
    eps_grid=None,
    spec: SystemSpec | None = None,
    u0=None,
    v0=None,
    threads: int = 1,
) -> MomentReport:
    """``E sup_t |U^eps_t|^2`` and ``sup_t E|V^eps_t|^2`` per eps, on the coarsest common grid.

    Both suprema are taken over the slot grid shared by every eps, so the
    estimates differ only through eps.  Uniformity holds when every value lies
    within four combined standard errors of the across-eps mean.
    """
    if config.replicas < 100:
        raise ConfigurationError("moment uniformity needs at least 100 replicas")
    spec = config.build_spec() if spec is None else spec
    eps_grid = config.epsilons if eps_grid is None else eps_grid
    u0, v0 = _initial(config, spec, u0, v0)
    rows = []
    for eps in eps_grid:
        h = config.step(eps)
        check_step_guard(eps, h)
        stepper = _Stepper(spec, eps, h)

        def chunk(block, m, eps=eps, h=h, stepper=stepper):
            plan = plan_noise(spec, config.seed, eps, h, m, config.slot_width, replica_block=block)
            every = 1 << plan.level
            u, v = _initial_states(spec, u0, v0, m)
            sup_u = np.sum(u**2, axis=-1)
            v2 = [np.sum(v**2, axis=-1)]
            for i, (inc, z) in enumerate(plan.increments(spec), start=1):
                u, v = stepper.step(u, v, inc, z)
                if i % every == 0:
                    np.maximum(sup_u, np.sum(u**2, axis=-1), out=sup_u)
                    v2.append(np.sum(v**2, axis=-1))
            return np.column_stack([sup_u, np.asarray(v2).T])

        samples = _map_chunks(chunk, config.replicas, threads)
        mu, su = mean_se(samples[:, 0])
        mv, sv = mean_se(samples[:, 1:])
        j = int(np.argmax(mv))
        rows.append((mu, su, mv[j], sv[j]))
    arr = np.asarray(rows, dtype=float)
    return MomentReport(np.asarray(eps_grid, dtype=float), *arr.T)


def gaussian_increment_variance(basis: EigenBasis, q: CovarianceSpectrum, u0, t: float, h) -> np.ndarray:
    """Exact ``E|U_{t+h} - U_t|^2`` for ``dU = A U dt + dW^Q`` started at ``u0``.

    Per mode the deterministic part contributes ``u0_k^2 e^{-2 a t} (1 - e^{-a h})^2`` and
    the stochastic convolution ``Var X_{t+h} + Var X_t - 2 e^{-a h} Var X_t``.
    """
    a = basis.rates[:, None]
    qk = q.values[:, None]
    u0 = np.asarray(u0, dtype=float)[:, None]
    h = np.atleast_1d(np.asarray(h, dtype=float))[None, :]

    def var(s):
        return qk * -np.expm1(-2.0 * a * s) / (2.0 * a)

    det = u0**2 * np.exp(-2.0 * a * t) * np.expm1(-a * h) ** 2
    sto = var(t + h) + var(t) - 2.0 * np.exp(-a * h) * var(t)
    return np.sum(det + sto, axis=0)


@dataclass(frozen=True)
class IncrementReport:
    h_probe: np.ndarray
    mean_sq: np.ndarray
    std_errors: np.ndarray
    fit: PowerFit
    threshold: float

    @property
    def exponent(self) -> float:
        return self.fit.slope

    @property
    def passed(self) -> bool:
        return bool(self.fit.slope >= self.threshold)


def time_increment_check(
    config: ExperimentConfig,
    eps: float,
    h_probe,
    spec: SystemSpec | None = None,
    u0=None,
    v0=None,
    threads: int = 1,
) -> IncrementReport:
    """Fit the exponent of ``h -> E|U^eps_{T/2 + h} - U^eps_{T/2}|^2``.

    Passes when the exponent is at least ``0.7 * 2 alpha``.  Probe lags must be
    whole multiples of the micro-step and at most ``T / 4``.
    """
    spec = config.build_spec() if spec is None else spec
    u0, v0 = _initial(config, spec, u0, v0)
    h = config.step(eps)
    check_step_guard(eps, h)
    h_probe = np.asarray(h_probe, dtype=float)
    T = spec.horizon
    lag = np.rint(h_probe / h).astype(int)
    if np.any(h_probe < h * (1 - 1e-9)) or np.any(np.abs(lag * h - h_probe) > 1e-9 * h_probe):
        raise ConfigurationError("probe lags must be whole multiples of the micro-step")
    if np.any(h_probe > T / 4 * (1 + 1e-12)):
        raise ConfigurationError("probe lags must not exceed T/4")
    stepper = _Stepper(spec, eps, h)
    t0 = int(round(T / 2 / h))
    targets = {t0 + int(k): j for j, k in enumerate(lag)}

    def chunk(block, m):
        plan = plan_noise(spec, config.seed, eps, h, m, config.slot_width, replica_block=block)
        u, v = _initial_states(spec, u0, v0, m)
        base = u if t0 == 0 else None
        out = np.zeros((m, len(lag)))
        for i, (inc, z) in enumerate(plan.increments(spec), start=1):
            u, v = stepper.step(u, v, inc, z)
            if i == t0:
                base = u
            if i in targets:
                out[:, targets[i]] = np.sum((u - base) ** 2, axis=-1)
        return out

    samples = _map_chunks(chunk, config.replicas, threads)
    mean, se = mean_se(samples)
    return IncrementReport(h_probe, mean, se, rate_fit(h_probe, mean), 0.7 * 2.0 * config.alpha)


@dataclass(frozen=True)
class GapReport:
    deltas: np.ndarray
    gap_v: np.ndarray
    gap_v_se: np.ndarray
    gap_u_sup: np.ndarray
    gap_u_sup_se: np.ndarray
    fit: PowerFit | None
    band: tuple

    @property
    def passed(self) -> bool:
        return self.fit is not None and self.band[0] <= self.fit.slope <= self.band[1]

    @property
    def identically_zero(self) -> bool:
        return bool(np.all(self.gap_v == 0) and np.all(self.gap_u_sup == 0))


def gap_slope(
    config: ExperimentConfig,
    eps: float,
    deltas,
    spec: SystemSpec | None = None,
    u0=None,
    v0=None,
) -> GapReport:
    """Block-length dependence of the block-frozen auxiliary gaps at one eps.

    One parent run is replayed for every block length.  The fitted statistic is
    the time average of ``E|Vt_t - V^eps_t|^2``; the expected slope band is
    ``[0.7, 1.3] * 2 alpha``.  When every gap is zero no fit is attempted.
    """
    spec = config.build_spec() if spec is None else spec
    u0, v0 = _initial(config, spec, u0, v0)
    h = config.step(eps)
    parent = simulate_coupled(
        spec, u0, v0, eps, h, config.seed, config.replicas, config.slot_width, record_every=None
    )
    gaps = [discretization_gap(parent, d) for d in deltas]
    gv = np.array([g.gap_v_mean for g in gaps])
    gv_se = np.array([np.sqrt(np.mean(g.gap_v_se**2)) for g in gaps])
    gu = np.array([g.gap_u_sup for g in gaps])
    gu_se = np.array([g.gap_u_sup_se for g in gaps])
    fit = rate_fit(deltas, gv) if np.all(gv > 0) else None
    band = (0.7 * 2.0 * config.alpha, 1.3 * 2.0 * config.alpha)
    return GapReport(np.asarray(deltas, dtype=float), gv, gv_se, gu, gu_se, fit, band)
