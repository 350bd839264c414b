import math
from pathlib import Path

import numpy as np
import pytest

from slowfast.config import load_config
from slowfast.coupled import (
    check_step_guard,
    default_block_length,
    default_initial_condition,
    discretization_gap,
    khasminskii_residual,
    plan_noise,
    simulate_coupled,
    simulate_khasminskii,
)
from slowfast.errors import ConfigurationError
from slowfast.fast import simulate_frozen
from slowfast.reaction import builtin_linear, builtin_nonlinear
from slowfast.stochastic import RngStream

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "default.yaml"


def test_zero_reactions_decay_by_semigroups():
    spec = builtin_linear(0, 0, 0, 0, lam=1.0, mode_count=6, q1=0.0).with_noise(q2=0.0, degenerate=True)
    rng = np.random.default_rng(0)
    u0, v0 = rng.standard_normal(6), rng.standard_normal(6)
    eps = 0.1
    run = simulate_coupled(spec, u0, v0, eps, 0.01, seed=1)
    k = np.arange(1, 7)
    assert np.allclose(run.slow.final[0], np.exp(-(k**2)) * u0, rtol=1e-12, atol=0)
    assert np.allclose(run.fast.final[0], np.exp(-(k**2 + 1.0) / eps) * v0, rtol=1e-10, atol=1e-300)


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_fast_stationary_variance_independent_of_eps(eps):
    spec = builtin_linear(-1.0, 1.0, 0.0, 0.2, lam=1.0, mode_count=4)
    replicas = 200
    run = simulate_coupled(spec, np.ones(4), np.zeros(4), eps, eps / 10, seed=3, replicas=replicas, record_every=None)
    var = run.fast.final.var(axis=0, ddof=1)
    expect = 1.0 / (2 * (spec.basis_fast.rates - 0.2))
    se = expect * math.sqrt(2 / (replicas - 1))
    assert np.all(np.abs(var - expect) <= 3 * se)


def test_slow_noise_shared_across_eps():
    spec = builtin_linear(-1.0, 1.0, 0.5, 0.0, lam=1.0, mode_count=8)
    slot = 0.05 * 0.1
    a = plan_noise(spec, 9, 0.1, slot, 5, slot)
    b = plan_noise(spec, 9, 0.05, slot / 2, 5, slot)
    assert a.slow_stream == b.slow_stream and a.fast_stream != b.fast_stream
    na, nb = a.slow_noise(spec), b.slow_noise(spec)
    for s in (0, 7, a.n_slots - 1):
        assert np.array_equal(na.slot_increments(s, 0), nb.slot_increments(s, 0))


def test_runs_are_replayable():
    spec = builtin_nonlinear(mode_count=8)
    u0, v0 = default_initial_condition(spec)
    a = simulate_coupled(spec, u0, v0, 0.1, 0.01, seed=4, replicas=3)
    b = simulate_coupled(spec, u0, v0, 0.1, 0.01, seed=4, replicas=3)
    assert np.array_equal(a.slow.states, b.slow.states)
    assert np.array_equal(a.fast.states, b.fast.states)
    last = None
    for i, u, v, _, _ in a.replay():
        last = u
    assert np.array_equal(last, a.slow.final)


def test_slow_and_fast_share_grid():
    spec = builtin_linear(-1.0, 1.0, 0.5, 0.0, lam=1.0, mode_count=4)
    run = simulate_coupled(spec, np.ones(4), np.zeros(4), 0.1, 0.01, seed=1, record_every=10)
    assert np.array_equal(run.slow.times, run.fast.times)
    assert math.isclose(run.slow.times[-1], spec.horizon)


def test_step_guard():
    spec = builtin_linear(-1.0, 1.0, 0.5, 0.0, lam=1.0, mode_count=4)
    check_step_guard(0.1, 0.01)
    with pytest.raises(ConfigurationError):
        check_step_guard(0.1, 0.011)
    with pytest.raises(ConfigurationError):
        simulate_coupled(spec, np.ones(4), np.zeros(4), 0.1, 0.02, seed=1)
    with pytest.raises(ConfigurationError):
        check_step_guard(0.0, 0.01)


def test_time_rescaling_of_fast_equation():
    # with c = 0 the fast equation ignores U, so V^eps(t) has the law of the
    # frozen process at t / eps
    spec = builtin_linear(-1.0, 1.0, 0.0, 0.2, lam=1.0, mode_count=3)
    eps, h, replicas = 0.1, 0.01, 400
    v0 = np.array([2.0, -1.0, 0.5])
    run = simulate_coupled(spec, np.ones(3), v0, eps, h, seed=6, replicas=replicas)
    frozen = simulate_frozen(
        spec, np.ones(3), np.broadcast_to(v0, (replicas, 3)).copy(), spec.horizon / eps, h / eps, RngStream(6, 99)
    )
    for t in (0.05, 0.2):
        a, b = run.fast.at(t), frozen.at(t / eps)
        se_mean = np.sqrt((a.var(axis=0, ddof=1) + b.var(axis=0, ddof=1)) / replicas)
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 3 * se_mean)
        va, vb = a.var(axis=0, ddof=1), b.var(axis=0, ddof=1)
        se_var = np.sqrt(2 / (replicas - 1)) * np.hypot(va, vb)
        assert np.all(np.abs(va - vb) <= 3 * se_var)


def test_micro_step_self_convergence():
    cfg = load_config(DEFAULT_CONFIG)
    spec = cfg.build_spec()
    u0, v0 = default_initial_condition(spec, cfg.alpha)
    eps = cfg.epsilons[0]
    sups = []
    for c_h in (cfg.c_h, cfg.c_h / 2):
        run = simulate_coupled(spec, u0, v0, eps, c_h * eps, cfg.seed, cfg.replicas, slot_width=cfg.c_h * eps)
        sups.append(np.linalg.norm(run.slow.states, axis=-1).max(axis=0).mean())
    assert abs(sups[0] - sups[1]) / sups[1] < 0.02


def test_khasminskii_resets_and_shares_grid():
    spec = builtin_linear(-1.0, 1.0, 0.5, 0.0, lam=1.0, mode_count=4)
    parent = simulate_coupled(spec, np.ones(4), np.zeros(4), 0.1, 0.01, seed=2, replicas=2)
    kh = simulate_khasminskii(parent, 0.1)
    assert np.array_equal(kh.tilde_slow.times, parent.slow.times)
    for t in (0.0, 0.3, 0.7):
        assert np.array_equal(kh.tilde_fast.at(t), parent.fast.at(t))
    assert not np.array_equal(kh.tilde_fast.at(0.35), parent.fast.at(0.35))
    with pytest.raises(ConfigurationError):
        simulate_khasminskii(parent, 0.015)
    with pytest.raises(ConfigurationError):
        simulate_khasminskii(parent, 0.3)
    with pytest.raises(ConfigurationError):
        simulate_khasminskii(parent, 2.0)


def test_single_step_blocks_have_no_gap():
    spec = builtin_linear(-1.0, 1.0, 0.5, 0.0, lam=1.0, mode_count=4)
    parent = simulate_coupled(spec, np.ones(4), np.zeros(4), 0.1, 0.01, seed=2, replicas=100, record_every=None)
    gap = discretization_gap(parent, parent.h)
    assert gap.gap_u_sup <= parent.h and np.max(gap.gap_v) <= parent.h


def test_gap_vanishes_without_slow_dependence():
    spec = builtin_linear(0.0, 1.0, 0.0, 0.3, lam=1.0, mode_count=4)
    parent = simulate_coupled(spec, np.ones(4), np.zeros(4), 0.1, 0.01, seed=2, replicas=100, record_every=None)
    gap = discretization_gap(parent, 0.1)
    assert gap.gap_u_sup == 0.0 and np.all(gap.gap_v == 0.0)


def test_gap_needs_replicas():
    spec = builtin_linear(-1.0, 1.0, 0.5, 0.0, lam=1.0, mode_count=4)
    parent = simulate_coupled(spec, np.ones(4), np.zeros(4), 0.1, 0.01, seed=2, replicas=10)
    with pytest.raises(ConfigurationError):
        discretization_gap(parent, 0.1)


def test_gaps_grow_with_block_length():
    spec = builtin_linear(-1.0, 1.0, 0.5, 0.0, lam=1.0, mode_count=16)
    eps = 1 / 32
    h = eps / 20
    u0, v0 = default_initial_condition(spec)
    parent = simulate_coupled(spec, u0, v0, eps, h, seed=8, replicas=100, record_every=None)
    gaps = [discretization_gap(parent, 2.0**-j) for j in (7, 6, 5, 4)]
    for small, big in zip(gaps, gaps[1:]):
        se_v = math.hypot(np.mean(small.gap_v_se), np.mean(big.gap_v_se))
        assert big.gap_v_mean >= small.gap_v_mean - se_v
        assert big.gap_u_sup >= small.gap_u_sup - math.hypot(small.gap_u_sup_se, big.gap_u_sup_se)


def test_block_length_rule():
    assert math.isclose(default_block_length(0.5, 1e-3), math.floor(0.5**2.5 / 1e-3) * 1e-3)
    assert math.isclose(default_block_length(0.01, 1e-3), 4e-3)


def test_residual_zero_without_fast_in_slow_drift():
    spec = builtin_linear(-1.0, 0.0, 0.5, 0.0, lam=1.0, mode_count=8)
    est = khasminskii_residual(spec, [0.125, 0.0625], replicas=20, seed=1)
    # F(u, v) - Fbar(u) cancels up to transform round-off
    assert np.all(est.values <= 1e-28)


def test_residual_decreases_with_coupling():
    vals = []
    for b in (1.0, 0.5, 0.1):
        spec = builtin_linear(-1.0, b, 0.5, 0.0, lam=1.0, mode_count=8)
        est = khasminskii_residual(spec, [0.0625], replicas=100, seed=3)
        vals.append((est.values[0], est.std_errors[0]))
    for (big, se_big), (small, se_small) in zip(vals, vals[1:]):
        assert small <= big + 3 * math.hypot(se_big, se_small)
    assert vals[-1][0] < vals[0][0]


def test_residual_requires_linear_system():
    with pytest.raises(ConfigurationError):
        khasminskii_residual(builtin_nonlinear(mode_count=4), [0.1], replicas=2, seed=1)
