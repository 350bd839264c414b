"""Coupled slow-fast integrator and the block-frozen (Khasminskii) auxiliary pair.

Both components are advanced in mild form: per mode, an exact OU step with the
reaction term frozen over the micro-step.  The fast equation runs at rate
``(alpha_k + lambda) / eps`` with noise of variance
``q2_k (1 - exp(-2 (alpha_k + lambda) h / eps)) / (2 (alpha_k + lambda))``.

Slow noise is read from a :class:`~slowfast.stochastic.DyadicOUNoise` whose slots
are the coarsest step of an experiment, so runs at several ``eps`` (and the
averaged equation) see one and the same realisation of ``W^{Q1}``.  Fast noise
is independent per ``eps``.  Replaying a run regenerates its noise exactly,
which is how the auxiliary processes reuse the parent's increments.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .averaging import averaged_gain
from .errors import ConfigurationError
from .reaction import SystemSpec
from .stats import PowerFit, mean_se, rate_fit
from .stochastic import (
    FAST_NOISE,
    SLOW_NOISE,
    DyadicOUNoise,
    OUPropagator,
    RngStream,
    stream_id,
)
from .trajectory import Recorder, Trajectory, step_count

__all__ = [
    "NoisePlan",
    "plan_noise",
    "fast_stream_index",
    "CoupledRun",
    "simulate_coupled",
    "KhasminskiiRun",
    "simulate_khasminskii",
    "DiscretizationGap",
    "discretization_gap",
    "ResidualEstimate",
    "khasminskii_residual",
    "default_block_length",
    "default_initial_condition",
    "check_step_guard",
]

STEP_GUARD = 10.0


def fast_stream_index(eps: float) -> int:
    """48-bit stream index derived from the value of ``eps``."""
    digest = hashlib.blake2b(repr(float(eps)).encode(), digest_size=6).digest()
    return int.from_bytes(digest, "big")


def check_step_guard(eps: float, h: float):
    if eps <= 0 or h <= 0:
        raise ConfigurationError("eps and h must be positive")
    if h > eps / STEP_GUARD * (1 + 1e-12):
        raise ConfigurationError(f"micro-step h={h} exceeds eps/{STEP_GUARD:g} = {eps / STEP_GUARD}")


@dataclass(frozen=True)
class NoisePlan:
    """Addresses of all random numbers consumed by one coupled run."""

    seed: int
    slot_width: float
    level: int
    n_slots: int
    replicas: int
    slow_stream: int
    fast_stream: int

    @property
    def n_steps(self) -> int:
        return self.n_slots << self.level

    def slow_noise(self, spec: SystemSpec) -> DyadicOUNoise:
        return DyadicOUNoise(
            RngStream(self.seed, self.slow_stream),
            spec.basis_slow.rates,
            spec.q1.values,
            self.slot_width,
            self.n_slots,
            self.replicas,
        )

    def increments(self, spec: SystemSpec):
        """Yield ``(slow_increment, fast_draw)`` per micro-step; draws are None without fast noise."""
        slow = self.slow_noise(spec).iter_steps(self.level)
        fast = RngStream(self.seed, self.fast_stream)
        noisy = bool(np.any(spec.q2.values > 0))
        shape = (self.replicas, spec.mode_count)
        for i in range(self.n_steps):
            z = fast.block(i).standard_normal(shape) if noisy else None
            yield next(slow), z


def plan_noise(
    spec: SystemSpec,
    seed: int,
    eps: float,
    h: float,
    replicas: int,
    slot_width: float | None = None,
    replica_block: int = 0,
) -> NoisePlan:
    """Lay out the noise for a run with micro-step ``h``.

    ``slot_width`` is the shared slow-noise slot (the coarsest step in an
    experiment); ``h`` must equal it divided by a power of two.
    """
    slot_width = h if slot_width is None else float(slot_width)
    ratio = slot_width / h
    level = int(round(np.log2(ratio))) if ratio >= 1 else -1
    if level < 0 or not np.isclose(ratio, 2.0**level, rtol=1e-9):
        raise ConfigurationError(f"slot width {slot_width} is not a power-of-two multiple of h={h}")
    n_slots = step_count(spec.horizon, slot_width)
    return NoisePlan(
        seed=int(seed),
        slot_width=slot_width,
        level=level,
        n_slots=n_slots,
        replicas=int(replicas),
        slow_stream=stream_id(SLOW_NOISE, replica_block),
        fast_stream=stream_id(FAST_NOISE, fast_stream_index(eps) ^ (replica_block << 32)),
    )


class _Stepper:
    """Per-mode propagators for the slow and fast equations at one ``(eps, h)``."""

    def __init__(self, spec: SystemSpec, eps: float, h: float):
        self.spec = spec
        self.eps = eps
        self.slow = OUPropagator.build(spec.basis_slow.rates, spec.q1.values, h)
        self.fast = OUPropagator.build(spec.basis_fast.rates / eps, spec.q2.values / eps, h)

    def slow_step(self, u, forcing, increment):
        return self.slow(u, forcing) + increment

    def fast_step(self, v, forcing, draw):
        return self.fast(v, forcing / self.eps, draw)

    def step(self, u, v, increment, draw):
        f, g = self.spec.drifts(u, v)
        return self.slow_step(u, f, increment), self.fast_step(v, g, draw)


def default_initial_condition(spec: SystemSpec, alpha: float = 0.2, amplitude: float = 1.0):
    """``u0_k = amplitude * k^-(2 alpha + 1)`` and ``v0 = 0``."""
    k = spec.basis_slow.modes.astype(float)
    return amplitude * k ** (-(2.0 * alpha + 1.0)), np.zeros(spec.mode_count)


def _initial_states(spec: SystemSpec, u0, v0, replicas: int):
    shape = (replicas, spec.mode_count)
    u = np.broadcast_to(spec.basis_slow.check(u0), shape).astype(float)
    v = np.broadcast_to(spec.basis_fast.check(v0), shape).astype(float)
    return u, v


def _path(spec: SystemSpec, u0, v0, eps: float, h: float, plan: NoisePlan):
    """Yield ``(i, U_i, V_i, slow_inc_i, fast_draw_i)`` for steps ``i = 0..n-1`` and
    finally ``(n, U_n, V_n, None, None)``."""
    stepper = _Stepper(spec, eps, h)
    u, v = _initial_states(spec, u0, v0, plan.replicas)
    i = 0
    for inc, z in plan.increments(spec):
        yield i, u, v, inc, z
        u, v = stepper.step(u, v, inc, z)
        i += 1
    yield i, u, v, None, None


@dataclass(frozen=True)
class CoupledRun:
    spec: SystemSpec
    epsilon: float
    h: float
    slow: Trajectory
    fast: Trajectory
    plan: NoisePlan
    u0: np.ndarray
    v0: np.ndarray

    @property
    def replicas(self) -> int:
        return self.plan.replicas

    @property
    def n_steps(self) -> int:
        return self.plan.n_steps

    def replay(self):
        """Regenerate the path step by step (same noise, same arithmetic)."""
        return _path(self.spec, self.u0, self.v0, self.epsilon, self.h, self.plan)


def simulate_coupled(
    spec: SystemSpec,
    u0,
    v0,
    eps: float,
    h: float,
    seed: int,
    replicas: int = 1,
    slot_width: float | None = None,
    record_every: int | None = 1,
    record_steps=None,
) -> CoupledRun:
    """Simulate ``(U^eps, V^eps)`` for ``replicas`` independent noise realisations."""
    check_step_guard(eps, h)
    plan = plan_noise(spec, seed, eps, h, replicas, slot_width)
    n = plan.n_steps
    rec_u = Recorder(n, h, record_every, record_steps)
    rec_v = Recorder(n, h, record_every, record_steps)
    for i, u, v, _, _ in _path(spec, u0, v0, eps, h, plan):
        rec_u(i, u)
        rec_v(i, v)
    return CoupledRun(
        spec=spec,
        epsilon=float(eps),
        h=float(h),
        slow=rec_u.trajectory(),
        fast=rec_v.trajectory(),
        plan=plan,
        u0=np.array(u0, dtype=float),
        v0=np.array(v0, dtype=float),
    )


def _block_steps(parent: CoupledRun, delta: float) -> int:
    m = int(round(delta / parent.h))
    if m < 1 or abs(m * parent.h - delta) > 1e-9 * delta:
        raise ConfigurationError(f"block length {delta} is not a multiple of h={parent.h}")
    if parent.n_steps % m:
        raise ConfigurationError(f"blocks of length {delta} do not tile [0, {parent.spec.horizon}]")
    return m


def _frozen_pairs(parent: CoupledRun, delta: float):
    """Replay the parent alongside the block-frozen pair.

    Yields ``(i, U, V, Ut, Vt, anchor)`` for every grid index ``i = 0..n``; ``anchor``
    is the slow state frozen for the block containing step ``i``.
    """
    m = _block_steps(parent, delta)
    stepper = _Stepper(parent.spec, parent.epsilon, parent.h)
    spec = parent.spec
    ut = vt = anchor = None
    last_u = None
    for i, u, v, inc, z in parent.replay():
        if i == 0:
            ut = u.copy()
        if i % m == 0:
            anchor = u
            vt = v.copy()
        yield i, u, v, ut, vt, anchor
        if inc is None:
            last_u = u
            break
        f, g = spec.drifts(anchor, vt)
        ut = stepper.slow_step(ut, f, inc)
        vt = stepper.fast_step(vt, g, z)
    recorded = len(parent.slow) and int(round(parent.slow.times[-1] / parent.h)) == parent.n_steps
    if recorded and not np.array_equal(
        last_u, parent.slow.final
    ):
        raise RuntimeError("replay diverged from the recorded parent run")


@dataclass(frozen=True)
class KhasminskiiRun:
    delta: float
    tilde_slow: Trajectory
    tilde_fast: Trajectory
    parent: CoupledRun


def simulate_khasminskii(parent: CoupledRun, delta: float) -> KhasminskiiRun:
    """Block-frozen pair driven by the parent's own noise.

    On every block ``[k delta, (k + 1) delta)`` the slow argument of F and G is the
    parent's ``U^eps_{k delta}`` and the fast auxiliary restarts from
    ``V^eps_{k delta}``.  Recorded at the parent's recording times.
    """
    if delta > parent.spec.horizon:
        raise ConfigurationError("block length exceeds the horizon")
    steps = set(np.rint(parent.slow.times / parent.h).astype(int).tolist())
    n = parent.n_steps
    rec_u = Recorder(n, parent.h, None, steps)
    rec_v = Recorder(n, parent.h, None, steps)
    for i, _, _, ut, vt, _ in _frozen_pairs(parent, delta):
        rec_u(i, ut)
        rec_v(i, vt)
    return KhasminskiiRun(float(delta), rec_u.trajectory(), rec_v.trajectory(), parent)


@dataclass(frozen=True)
class DiscretizationGap:
    times: np.ndarray
    gap_v: np.ndarray
    gap_v_se: np.ndarray
    gap_u_sup: float
    gap_u_sup_se: float

    @property
    def gap_v_mean(self) -> float:
        """Time average of ``E|Vt - V|^2`` over the grid."""
        return float(self.gap_v.mean())


def discretization_gap(parent: CoupledRun, delta: float, min_replicas: int = 100) -> DiscretizationGap:
    """Monte Carlo curve ``E|Vt_t - V_t|^2`` and scalar ``E sup_t |Ut_t - U_t|^2``."""
    if parent.replicas < min_replicas:
        raise ConfigurationError(f"discretization gap needs at least {min_replicas} replicas")
    gv, gv_se = [], []
    sup_u = np.zeros(parent.replicas)
    for _, u, v, ut, vt, _ in _frozen_pairs(parent, delta):
        dv = np.sum((vt - v) ** 2, axis=-1)
        m, se = mean_se(dv)
        gv.append(m)
        gv_se.append(se)
        np.maximum(sup_u, np.sum((ut - u) ** 2, axis=-1), out=sup_u)
    mu, su = mean_se(sup_u)
    times = np.arange(parent.n_steps + 1) * parent.h
    return DiscretizationGap(times, np.asarray(gv), np.asarray(gv_se), float(mu), float(su))


def default_block_length(eps: float, h: float, alpha: float = 0.2, min_steps: int = 4) -> float:
    """``max(eps^(1/(2 alpha)), min_steps h)`` rounded down to a whole number of steps."""
    raw = eps ** (1.0 / (2.0 * alpha))
    steps = max(min_steps, int(np.floor(raw / h + 1e-9)))
    return steps * h


@dataclass(frozen=True)
class ResidualEstimate:
    epsilons: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    deltas: np.ndarray
    fit: PowerFit


def _residual_one(spec, u0, v0, eps, h, delta, plan):
    gain = averaged_gain(spec)
    stepper = _Stepper(spec, eps, h)
    m = int(round(delta / h))
    u, v = _initial_states(spec, u0, v0, plan.replicas)
    resid = np.zeros_like(u)
    sup = np.zeros(plan.replicas)
    vt = anchor = None
    for i, (inc, z) in enumerate(plan.increments(spec)):
        if i % m == 0:
            anchor = u
            vt = v.copy()
        f, g = spec.drifts(anchor, vt)
        resid = stepper.slow(resid, f - gain * anchor)
        vt = stepper.fast_step(vt, g, z)
        u, v = stepper.step(u, v, inc, z)
        np.maximum(sup, np.sum(resid**2, axis=-1), out=sup)
    return mean_se(sup)


def khasminskii_residual(
    spec: SystemSpec,
    epsilons,
    replicas: int,
    seed: int,
    c_h: float = 0.05,
    alpha: float = 0.2,
    delta_rule: Callable[[float, float], float] | None = None,
    u0=None,
    v0=None,
) -> ResidualEstimate:
    """``E sup_t |int_0^t e^{A1 (t-s)} (F(U_anchor, Vt_s) - Fbar(U_anchor)) ds|^2`` per eps.

    The integral is accumulated with the same exponential-Euler weight as the
    slow equation.  Needs the closed-form averaged drift so the estimate is not
    polluted by ergodic-averaging noise.
    """
    if spec.linear is None:
        raise ConfigurationError("the residual diagnostic needs a system with a closed-form averaged drift")
    eps_arr = np.asarray(epsilons, dtype=float)
    if u0 is None or v0 is None:
        du, dv = default_initial_condition(spec, alpha)
        u0 = du if u0 is None else u0
        v0 = dv if v0 is None else v0
    if delta_rule is None:
        delta_rule = lambda e, h: default_block_length(e, h, alpha)  # noqa: E731
    slot = c_h * eps_arr.max()
    vals, ses, deltas = [], [], []
    for eps in eps_arr:
        h = c_h * eps
        check_step_guard(eps, h)
        delta = delta_rule(eps, h)
        plan = plan_noise(spec, seed, eps, h, replicas, slot)
        m = int(round(delta / h))
        if m < 1 or plan.n_steps % m:
            raise ConfigurationError(f"block length {delta} does not tile the horizon at eps={eps}")
        mean, se = _residual_one(spec, u0, v0, eps, h, delta, plan)
        vals.append(mean)
        ses.append(se)
        deltas.append(delta)
    vals = np.asarray(vals)
    fit = rate_fit(eps_arr, vals) if np.all(vals > 0) and len(vals) >= 3 else PowerFit(np.nan, np.nan, np.nan)
    return ResidualEstimate(eps_arr, vals, np.asarray(ses), np.asarray(deltas), fit)
