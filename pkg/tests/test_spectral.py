import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from slowfast.errors import ConfigurationError
from slowfast.spectral import (
    build_basis,
    fractional_norm,
    phi1_apply,
    semigroup_apply,
    to_physical,
    to_spectral,
    verify_hypothesis_h1,
)

finite = st.floats(-10, 10, allow_nan=False)


def test_eigenvalues_on_pi_interval():
    assert np.array_equal(build_basis(math.pi, 3).eigenvalues, [1.0, 4.0, 9.0])


def test_shift_adds_to_rates():
    b = build_basis(math.pi, 2, shift=1.0)
    assert np.allclose(b.eigenvalues, [1, 4])
    assert np.allclose(b.rates, [2, 5])


def test_unit_interval_single_mode():
    assert np.isclose(build_basis(1.0, 1).eigenvalues[0], math.pi**2)


@pytest.mark.parametrize("args", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5), (1.0, 3, -0.1)])
def test_invalid_basis_rejected(args):
    with pytest.raises(ConfigurationError):
        build_basis(*args)


def test_semigroup_examples():
    assert np.allclose(semigroup_apply(build_basis(math.pi, 2), [1, 1], 0.0), [1, 1])
    assert np.isclose(semigroup_apply(build_basis(math.pi, 1), [2.0], math.log(2))[0], 1.0)
    assert np.isclose(semigroup_apply(build_basis(math.pi, 1, 1.0), [1.0], 1.0)[0], math.exp(-2))


def test_semigroup_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        semigroup_apply(build_basis(math.pi, 3), [1.0, 2.0], 0.1)


def test_phi1_examples():
    b = build_basis(math.pi, 1)
    assert abs(phi1_apply(b, [1.0], 1e-8)[0] - 1e-8) < 1e-12
    assert np.isclose(phi1_apply(b, [1.0], math.log(2))[0], 0.5)
    b3 = build_basis(math.sqrt(3) * math.pi / 3, 1, shift=1.0)  # alpha_1 = 3
    assert np.isclose(b3.eigenvalues[0], 3.0)
    assert np.isclose(phi1_apply(b3, [4.0], 100.0)[0], 1.0)


def test_fractional_norm_examples():
    b = build_basis(math.pi, 2)
    assert np.isclose(fractional_norm(b, [3, 4], 0.0), 5.0)
    assert np.isclose(fractional_norm(b, [0, 1], 0.5), 2.0)
    assert np.isclose(fractional_norm(build_basis(math.pi / 2, 1), [1.0], 1.0), 4.0)


def test_hypothesis_h1_examples():
    b = build_basis(math.pi, 256)
    assert verify_hypothesis_h1(b, 0.6, 3, 0.2).passed
    bad_beta = verify_hypothesis_h1(b, 0.6, 3, 0.4)
    assert not bad_beta.passed and any("beta" in r for r in bad_beta.reasons)
    assert not verify_hypothesis_h1(b, 0.1, 2, 0.3).passed


def test_hypothesis_h1_divergence_oracle():
    # The first summand is k^(-2 mu) = k^-0.2; direct partial sums keep growing.
    k = np.arange(1, 10**6 + 1, dtype=float)
    s = np.cumsum(k ** (-0.2))
    assert s[-1] / s[999] > 10
    rep = verify_hypothesis_h1(build_basis(math.pi, 256), 0.1, 2, 0.3)
    assert np.isclose(rep.tail_exponents[0], -0.2, atol=1e-9)


def test_hypothesis_h1_rejects_small_n():
    with pytest.raises(ConfigurationError):
        verify_hypothesis_h1(build_basis(math.pi, 8), 0.6, 1, 0.2)


def test_transform_single_mode_at_midpoint():
    g = to_physical(build_basis(math.pi, 1), [1.0])
    assert np.isclose(g[0], math.sqrt(2 / math.pi))


def test_transform_round_trip_n64():
    b = build_basis(math.pi, 64)
    x = np.random.default_rng(0).standard_normal(64)
    assert np.max(np.abs(to_spectral(b, to_physical(b, x)) - x)) <= 1e-12


def test_to_physical_samples_sine_modes():
    b = build_basis(2.5, 7)
    for k in range(1, 8):
        e = np.zeros(7)
        e[k - 1] = 1.0
        expect = math.sqrt(2 / b.length) * np.sin(k * np.pi * b.grid / b.length)
        assert np.allclose(to_physical(b, e), expect, atol=1e-13)


def test_grid_length_mismatch():
    with pytest.raises(ConfigurationError):
        to_spectral(build_basis(1.0, 4), np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(
    n=st.sampled_from([1, 2, 16, 64]),
    length=st.floats(0.1, 10),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_and_parseval(n, length, seed):
    b = build_basis(length, n)
    x = np.random.default_rng(seed).standard_normal(n)
    g = to_physical(b, x)
    assert np.allclose(to_spectral(b, g), x, atol=1e-12, rtol=0)
    quad = length / (n + 1) * np.sum(g**2)
    assert abs(quad - np.sum(x**2)) <= 1e-10 * max(1.0, np.sum(x**2))


@settings(max_examples=100, deadline=None)
@given(
    s=st.floats(0, 5),
    t=st.floats(0, 5),
    shift=st.floats(0, 3),
    x=st.lists(finite, min_size=6, max_size=6),
)
def test_semigroup_composition_and_contraction(s, t, shift, x):
    b = build_basis(math.pi, 6, shift)
    x = np.asarray(x)
    two = semigroup_apply(b, semigroup_apply(b, x, t), s)
    one = semigroup_apply(b, x, s + t)
    assert np.max(np.abs(two - one)) <= 1e-12
    assert np.linalg.norm(one) <= np.linalg.norm(x) + 1e-15


@settings(max_examples=100, deadline=None)
@given(h=st.floats(1e-6, 10), shift=st.floats(0, 3), x=st.lists(finite, min_size=5, max_size=5))
def test_phi1_identity(h, shift, x):
    b = build_basis(math.pi, 5, shift)
    x = np.asarray(x)
    lhs = semigroup_apply(b, x, h) + b.rates * phi1_apply(b, x, h)
    assert np.allclose(lhs, x, atol=1e-12 * max(1.0, np.max(np.abs(x))), rtol=0)


def _brute_force_convergent(p):
    """Decide summability of sum k^p from partial sums at 1e3 and 1e6."""
    k = np.arange(1, 10**6 + 1, dtype=float)
    s = np.cumsum(k**p)
    return s[-1] / s[999] < 2.0


@settings(max_examples=20, deadline=None)
@given(mu=st.floats(0.05, 1.5), n=st.integers(2, 6), beta=st.floats(0.0, 0.5))
def test_h1_agrees_with_partial_sums(mu, n, beta):
    p1 = -2 * mu
    p2 = 2 * (n * (mu + 2 * beta - 1) - mu)
    assume(abs(p1 + 1) > 0.3 and abs(p2 + 1) > 0.3)
    expected = 1 / (2 * n) < beta < 1 / 3 and _brute_force_convergent(p1) and _brute_force_convergent(p2)
    assert verify_hypothesis_h1(build_basis(math.pi, 512), mu, n, beta).passed == expected
