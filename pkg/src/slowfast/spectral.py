"""Dirichlet-Laplacian eigenbasis on [0, L] and the operations that act in it.

A field is represented by its coefficient vector in the orthonormal sine basis
``e_k(xi) = sqrt(2/L) sin(k pi xi / L)``, ``k = 1..N``.  Everything here accepts
batched coefficient arrays: the trailing axis indexes modes, any leading axes
(replicas, time) broadcast through.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .errors import ConfigurationError

__all__ = [
    "EigenBasis",
    "HypothesisReport",
    "build_basis",
    "semigroup_apply",
    "phi1_apply",
    "phi1_weights",
    "fractional_norm",
    "verify_hypothesis_h1",
    "to_physical",
    "to_spectral",
]


@dataclass(frozen=True)
class EigenBasis:
    """First ``mode_count`` eigenpairs of ``d^2/dxi^2 - shift`` with Dirichlet BCs.

    ``eigenvalues`` holds alpha_k = (k pi / L)^2 (the unshifted Laplacian part);
    the semigroup decays mode k at ``rates[k-1] = alpha_k + shift``.
    """

    length: float
    mode_count: int
    shift: float = 0.0
    eigenvalues: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.length) or self.length <= 0:
            raise ConfigurationError(f"domain length must be positive, got {self.length}")
        if int(self.mode_count) != self.mode_count or self.mode_count < 1:
            raise ConfigurationError(f"mode count must be a positive integer, got {self.mode_count}")
        if not np.isfinite(self.shift) or self.shift < 0:
            raise ConfigurationError(f"shift must be non-negative, got {self.shift}")
        k = np.arange(1, int(self.mode_count) + 1, dtype=float)
        alpha = (k * np.pi / self.length) ** 2
        alpha.setflags(write=False)
        object.__setattr__(self, "mode_count", int(self.mode_count))
        object.__setattr__(self, "eigenvalues", alpha)

    @property
    def rates(self) -> np.ndarray:
        return self.eigenvalues + self.shift

    @property
    def grid(self) -> np.ndarray:
        """Interior collocation nodes ``xi_j = j L / (N + 1)``."""
        n = self.mode_count
        return np.arange(1, n + 1) * self.length / (n + 1)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(1, self.mode_count + 1)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.mode_count:
            raise ConfigurationError(
                f"field has {x.shape[-1] if x.ndim else 0} modes, basis has {self.mode_count}"
            )
        return x


def build_basis(length: float, mode_count: int, shift: float = 0.0) -> EigenBasis:
    return EigenBasis(float(length), mode_count, float(shift))


def semigroup_apply(basis: EigenBasis, x, t: float) -> np.ndarray:
    """Apply ``e^{tA}``: mode k is multiplied by ``exp(-(alpha_k + shift) t)``."""
    if t < 0:
        raise ConfigurationError("semigroup time must be non-negative")
    x = basis.check(x)
    return np.exp(-basis.rates * t) * x


def phi1_weights(rates: np.ndarray, h: float) -> np.ndarray:
    """``(1 - exp(-r h)) / r`` per mode, i.e. the integral of the semigroup over one step."""
    rates = np.asarray(rates, dtype=float)
    return -np.expm1(-rates * h) / rates


def phi1_apply(basis: EigenBasis, x, h: float) -> np.ndarray:
    """Exact response of the semigroup to a forcing ``x`` held constant for time ``h``."""
    if h <= 0:
        raise ConfigurationError("step must be positive")
    x = basis.check(x)
    return phi1_weights(basis.rates, h) * x


def fractional_norm(basis: EigenBasis, x, theta: float) -> np.ndarray:
    """Norm of ``(-A)^theta x``; reduces to the L2 norm at ``theta = 0``."""
    if theta < 0:
        raise ConfigurationError("theta must be non-negative")
    x = basis.check(x)
    weights = basis.eigenvalues ** (2.0 * theta)
    return np.sqrt(np.sum(weights * x * x, axis=-1))


def to_physical(basis: EigenBasis, x) -> np.ndarray:
    """Sample the field on the interior collocation grid (DST-I synthesis)."""
    x = basis.check(x)
    return fft.dst(x, type=1, axis=-1) * (0.5 * np.sqrt(2.0 / basis.length))


def to_spectral(basis: EigenBasis, g) -> np.ndarray:
    """Inverse of :func:`to_physical`; equivalent to trapezoidal projection onto e_k."""
    g = np.asarray(g, dtype=float)
    if g.ndim == 0 or g.shape[-1] != basis.mode_count:
        raise ConfigurationError(
            f"grid has {g.shape[-1] if g.ndim else 0} values, basis has {basis.mode_count}"
        )
    n = basis.mode_count
    scale = np.sqrt(2.0 * basis.length) / (n + 1)
    return fft.dst(g, type=1, axis=-1) * (0.5 * scale)


@dataclass(frozen=True)
class HypothesisReport:
    passed: bool
    mu: float
    n_int: int
    beta: float
    partial_sums: tuple[np.ndarray, np.ndarray]
    tail_exponents: tuple[float, float]
    reasons: tuple[str, ...] = ()


def _tail_exponent(k: np.ndarray, summand: np.ndarray) -> float:
    upper = k >= max(1, len(k) // 2)
    if upper.sum() < 2:
        upper = np.ones_like(k, dtype=bool)
    if upper.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(k[upper]), np.log(summand[upper]), 1)
    return float(slope)


def verify_hypothesis_h1(basis: EigenBasis, mu: float, n_int: int, beta: float) -> HypothesisReport:
    """Check the two summability conditions on the eigenvalue sequence.

    The series ``sum alpha_k^-mu`` and ``sum alpha_k^(n(mu + 2 beta - 1) - mu)`` are
    judged convergent when the power-law exponent of their summands, fitted on the
    upper half of the available modes, is below -1.  The parameter window
    ``1/(2n) < beta < 1/3``, ``mu > 0``, ``n >= 2`` is checked as well.
    """
    if int(n_int) != n_int or n_int < 2:
        raise ConfigurationError("n_int must be an integer >= 2")
    n_int = int(n_int)
    alpha = basis.eigenvalues
    k = basis.modes.astype(float)
    first = alpha ** (-mu)
    second = alpha ** (n_int * (mu + 2.0 * beta - 1.0) - mu)
    exps = (_tail_exponent(k, first), _tail_exponent(k, second))

    reasons = []
    if mu <= 0:
        reasons.append(f"mu={mu} must be positive")
    if not 1.0 / (2 * n_int) < beta < 1.0 / 3.0:
        reasons.append(f"beta={beta} outside (1/(2n), 1/3) = ({1.0 / (2 * n_int):.4g}, 0.3333)")
    for name, e in zip(("first", "second"), exps):
        if not e < -1.0:
            reasons.append(f"{name} series summand decays like k^{e:.3f}, not summable")
    return HypothesisReport(
        passed=not reasons,
        mu=float(mu),
        n_int=n_int,
        beta=float(beta),
        partial_sums=(np.cumsum(first), np.cumsum(second)),
        tail_exponents=exps,
        reasons=tuple(reasons),
    )
