import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast.errors import ConfigurationError
from slowfast.reaction import (
    SystemSpec,
    build_system,
    builtin_nonlinear,
    builtin_linear,
    dissipativity_margin,
    nemytskii,
)
from slowfast.spectral import to_physical


def test_nemytskii_examples():
    grid = np.array([0.5, 1.0])
    u = np.array([1.0, 0.0])
    v = np.array([3.0, 5.0])
    assert np.array_equal(nemytskii(lambda xi, u, v: u, u, v, grid), u)
    assert np.allclose(nemytskii(lambda xi, u, v: np.sin(v), u, [0.0, np.pi / 2], grid), [0, 1])
    assert np.allclose(nemytskii(lambda xi, u, v: 2 * u - v, u, v, grid), [-1, -5])


def test_nemytskii_length_mismatch():
    with pytest.raises(ConfigurationError):
        nemytskii(lambda xi, u, v: u, [1.0, 2.0], [1.0], [0.1, 0.2])


@settings(max_examples=50, deadline=None)
@given(j=st.integers(0, 15), bump=st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3))
def test_nemytskii_is_local(j, bump):
    spec = builtin_nonlinear(mode_count=16)
    rng = np.random.default_rng(j)
    u, v = rng.standard_normal(16), rng.standard_normal(16)
    grid = spec.basis_slow.grid
    base = nemytskii(spec.reactions.f, u, v, grid)
    u2 = u.copy()
    u2[j] += bump
    moved = nemytskii(spec.reactions.f, u2, v, grid)
    changed = np.flatnonzero(moved != base)
    assert set(changed.tolist()) <= {j}


def test_dissipativity_margin_examples():
    assert math.isclose(dissipativity_margin(builtin_linear(-1, 1, 0.5, 0, lam=1.0)), 0.25)
    assert math.isclose(dissipativity_margin(builtin_linear(-1, 1, 1.0, 0, lam=2.0)), 0.5)
    with pytest.raises(ConfigurationError):
        builtin_linear(-1, 1, 1.0, 0, lam=1.0)


def test_builtin_linear_examples():
    zero = builtin_linear(0, 0, 0, 0, lam=1.0, mode_count=8)
    assert zero.reactions.lip_f == 0 and zero.linear is not None
    spec = builtin_linear(-1, 1, 0.5, 0, lam=1.0)
    assert math.isclose(spec.delta, 0.25)
    assert spec.linear.c == 0.5


def test_builtin_example_defaults():
    spec = builtin_nonlinear(lam=1.0)
    assert math.isclose(spec.reactions.lip_g, 0.5)
    assert math.isclose(spec.delta, 0.25)
    assert np.all(spec.q1.values == 1) and np.all(spec.q2.values == 1)
    with pytest.raises(ConfigurationError):
        builtin_nonlinear(lam=0.4)


def test_spec_guards():
    spec = builtin_linear(-1, 1, 0.5, 0, lam=1.0, mode_count=8)
    with pytest.raises(ConfigurationError):
        spec.with_noise(q2=0.0)
    assert spec.with_noise(q2=0.0, degenerate=True).q2.values.sum() == 0
    with pytest.raises(ConfigurationError):
        builtin_linear(-1, 1, 0.5, 0, lam=1.0, horizon=0.0)
    with pytest.raises(ConfigurationError):
        SystemSpec(spec.basis_fast, spec.basis_fast, spec.reactions, spec.q1, spec.q2, 1.0)


def test_build_system_by_name():
    spec = build_system("linear", length=np.pi, mode_count=8, lam=1.0, horizon=1.0, b=0.0)
    assert spec.linear.b == 0.0
    with pytest.raises(ConfigurationError):
        build_system("linear", length=np.pi, mode_count=8, lam=1.0, horizon=1.0, kappa_f=1.0)
    with pytest.raises(ConfigurationError):
        build_system("nope", length=np.pi, mode_count=8, lam=1.0, horizon=1.0)


def test_linear_drift_in_spectral_coordinates():
    spec = builtin_linear(2.0, -0.5, 0.3, 0.1, lam=1.0, mode_count=32)
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal(32), rng.standard_normal(32)
    f, g = spec.drifts(u, v)
    assert np.allclose(f, 2.0 * u - 0.5 * v, atol=1e-12)
    assert np.allclose(g, 0.3 * u + 0.1 * v, atol=1e-12)
    assert np.allclose(spec.slow_drift(u, v), f)


def test_drift_evaluates_pointwise_on_grid():
    spec = builtin_nonlinear(mode_count=16)
    rng = np.random.default_rng(3)
    u, v = rng.standard_normal(16), rng.standard_normal(16)
    f, _ = spec.drifts(u, v)
    xi = spec.basis_slow.grid
    expect = np.sin(to_physical(spec.basis_slow, u)) + 0.5 * (1 + xi / np.pi) * to_physical(spec.basis_slow, v)
    assert np.allclose(to_physical(spec.basis_slow, f), expect, atol=1e-12)


@pytest.mark.parametrize(
    "spec",
    [builtin_linear(-1, 1, 0.5, 0.2, lam=1.0, mode_count=4), builtin_nonlinear(mode_count=4)],
    ids=["linear", "nonlinear"],
)
def test_declared_lipschitz_constants_dominate(spec):
    rng = np.random.default_rng(4)
    xi = rng.uniform(0, spec.basis_slow.length, 1000)
    u1, v1, u2, v2 = rng.normal(0, 3, (4, 1000))
    dist = np.abs(u2 - u1) + np.abs(v2 - v1)
    for fn, lip in ((spec.reactions.f, spec.reactions.lip_f), (spec.reactions.g, spec.reactions.lip_g)):
        quot = np.abs(fn(xi, u2, v2) - fn(xi, u1, v1)) / dist
        assert np.all(quot <= lip + 1e-12)


def test_fingerprint_stable():
    a = builtin_linear(-1, 1, 0.5, 0, lam=1.0)
    assert a.fingerprint() == builtin_linear(-1, 1, 0.5, 0, lam=1.0).fingerprint()
    assert a.fingerprint() != builtin_linear(-1, 1, 0.4, 0, lam=1.0).fingerprint()
