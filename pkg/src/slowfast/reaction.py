"""Reaction terms, their Nemytskii lifting, and full problem descriptions."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .spectral import EigenBasis, build_basis, to_physical, to_spectral
from .stochastic import CovarianceSpectrum

__all__ = [
    "ReactionPair",
    "LinearCoefficients",
    "SystemSpec",
    "nemytskii",
    "dissipativity_margin",
    "builtin_linear",
    "builtin_nonlinear",
    "build_system",
    "BUILTIN_SYSTEMS",
]

PointwiseFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ReactionPair:
    """Pointwise reaction functions ``f(xi, u, v)`` and ``g(xi, u, v)``.

    Both must be vectorised over numpy arrays.  ``lip_f`` and ``lip_g`` are the
    declared Lipschitz constants (uniform in xi) in the sense
    ``|f(u2, v2) - f(u1, v1)| <= L (|u2 - u1| + |v2 - v1|)``.
    """

    f: PointwiseFn
    g: PointwiseFn
    lip_f: float
    lip_g: float
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class LinearCoefficients:
    """``f = a u + b v`` and ``g = c u + d v``."""

    a: float
    b: float
    c: float
    d: float


def nemytskii(fn: PointwiseFn, u_grid, v_grid, grid) -> np.ndarray:
    """Evaluate ``fn(xi_j, u(xi_j), v(xi_j))`` node by node."""
    u_grid = np.asarray(u_grid, dtype=float)
    v_grid = np.asarray(v_grid, dtype=float)
    grid = np.asarray(grid, dtype=float)
    n = grid.shape[-1]
    if u_grid.shape[-1] != n or v_grid.shape[-1] != n:
        raise ConfigurationError("u, v and grid must have the same number of nodes")
    out = fn(grid, u_grid, v_grid)
    return np.broadcast_to(out, np.broadcast_shapes(u_grid.shape, v_grid.shape)).astype(float)


@dataclass(frozen=True)
class SystemSpec:
    """Everything needed to simulate one slow-fast reaction-diffusion system."""

    basis_slow: EigenBasis
    basis_fast: EigenBasis
    reactions: ReactionPair
    q1: CovarianceSpectrum
    q2: CovarianceSpectrum
    horizon: float
    linear: LinearCoefficients | None = None
    # waives the q2 > 0 guard; only for deterministic oracle runs
    degenerate_noise: bool = False

    def __post_init__(self):
        bs, bf = self.basis_slow, self.basis_fast
        if bs.shift != 0:
            raise ConfigurationError("the slow operator carries no shift")
        if bf.shift <= 0:
            raise ConfigurationError("the fast operator needs a positive shift lambda")
        if bs.mode_count != bf.mode_count or bs.length != bf.length:
            raise ConfigurationError("slow and fast bases must share length and mode count")
        if len(self.q1) != bs.mode_count or len(self.q2) != bf.mode_count:
            raise ConfigurationError("covariance spectra must match the mode count")
        if not self.degenerate_noise and (not self.q2.invertible or np.any(self.q2.values <= 0)):
            raise ConfigurationError("the fast covariance must be invertible (all q2_k > 0)")
        if not self.reactions.lip_g < bf.shift:
            raise ConfigurationError(
                f"dissipativity violated: L_G = {self.reactions.lip_g} is not < lambda = {bf.shift}"
            )
        if self.horizon <= 0:
            raise ConfigurationError("time horizon must be positive")
        lin = self.linear
        if lin is not None:
            tol = 1e-12
            if abs(lin.a) + abs(lin.b) > self.reactions.lip_f + tol:
                raise ConfigurationError("declared L_F is below |a| + |b|")
            if abs(lin.c) + abs(lin.d) > self.reactions.lip_g + tol:
                raise ConfigurationError("declared L_G is below |c| + |d|")

    @property
    def mode_count(self) -> int:
        return self.basis_slow.mode_count

    @property
    def lam(self) -> float:
        return self.basis_fast.shift

    @property
    def delta(self) -> float:
        return dissipativity_margin(self)

    def slow_drift(self, u, v) -> np.ndarray:
        """Spectral coefficients of ``F(u, v)``."""
        return self._lift(self.reactions.f, u, v)

    def fast_drift(self, u, v) -> np.ndarray:
        """Spectral coefficients of ``G(u, v)``."""
        return self._lift(self.reactions.g, u, v)

    def drifts(self, u, v):
        """``(F(u, v), G(u, v))`` in spectral coordinates, sharing the grid transforms."""
        b = self.basis_slow
        ug = to_physical(b, u)
        vg = to_physical(self.basis_fast, v)
        f = nemytskii(self.reactions.f, ug, vg, b.grid)
        g = nemytskii(self.reactions.g, ug, vg, b.grid)
        return to_spectral(b, f), to_spectral(b, g)

    def _lift(self, fn, u, v):
        b = self.basis_slow
        ug = to_physical(b, u)
        vg = to_physical(self.basis_fast, v)
        return to_spectral(b, nemytskii(fn, ug, vg, b.grid))

    def describe(self) -> dict:
        return {
            "system": self.reactions.name,
            "params": self.reactions.params,
            "L": self.basis_slow.length,
            "N": self.mode_count,
            "lambda": self.lam,
            "T": self.horizon,
            "L_F": self.reactions.lip_f,
            "L_G": self.reactions.lip_g,
            "q1": self.q1.values.tolist(),
            "q2": self.q2.values.tolist(),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_noise(self, q1=None, q2=None, degenerate: bool = False) -> "SystemSpec":
        """Copy with replaced covariance spectra (arrays or scalars broadcast to N).

        ``degenerate=True`` allows a non-invertible fast covariance, e.g. ``q2 = 0``.
        """
        n = self.mode_count
        q1 = self.q1 if q1 is None else _spectrum(q1, n)
        q2 = self.q2 if q2 is None else _spectrum(q2, n, invertible=not degenerate)
        return SystemSpec(
            self.basis_slow,
            self.basis_fast,
            self.reactions,
            q1,
            q2,
            self.horizon,
            self.linear,
            degenerate_noise=degenerate,
        )


def dissipativity_margin(spec: SystemSpec) -> float:
    """``delta = (lambda - L_G) / 2``."""
    return 0.5 * (spec.lam - spec.reactions.lip_g)


def _spectrum(values, n, invertible=False) -> CovarianceSpectrum:
    if isinstance(values, CovarianceSpectrum):
        return values
    arr = np.broadcast_to(np.asarray(values, dtype=float), (n,))
    return CovarianceSpectrum(arr.copy(), invertible=invertible)


def builtin_linear(
    a: float,
    b: float,
    c: float,
    d: float,
    lam: float,
    length: float = np.pi,
    mode_count: int = 64,
    horizon: float = 1.0,
    q1=1.0,
    q2=1.0,
) -> SystemSpec:
    """Fully linear system with closed-form invariant measure and averaged drift."""
    coeffs = LinearCoefficients(float(a), float(b), float(c), float(d))
    lip_f = abs(a) + abs(b)
    lip_g = abs(c) + abs(d)
    if not lip_g < lam:
        raise ConfigurationError(f"dissipativity violated: |c| + |d| = {lip_g} is not < lambda = {lam}")
    pair = ReactionPair(
        f=lambda xi, u, v: a * u + b * v,
        g=lambda xi, u, v: c * u + d * v,
        lip_f=lip_f,
        lip_g=lip_g,
        name="linear",
        params={"a": a, "b": b, "c": c, "d": d},
    )
    return SystemSpec(
        basis_slow=build_basis(length, mode_count, 0.0),
        basis_fast=build_basis(length, mode_count, lam),
        reactions=pair,
        q1=_spectrum(q1, mode_count),
        q2=_spectrum(q2, mode_count, invertible=True),
        horizon=float(horizon),
        linear=coeffs,
    )


def builtin_nonlinear(
    length: float = np.pi,
    mode_count: int = 64,
    lam: float = 1.0,
    horizon: float = 1.0,
    kappa_f: float = 0.5,
    kappa_g: float = 0.3,
    kappa_c: float = 0.2,
) -> SystemSpec:
    """Nonlinear reaction-diffusion pair driven by space-time white noise.

    ``f = sin(u) + kappa_f (1 + xi / L) v`` and ``g = kappa_g sin(v) + kappa_c u``.
    The functional form is a choice of this package; any Lipschitz pair with
    ``L_G < lambda`` fits the same theory.  Declared constants are the sums of
    the partial-derivative bounds: ``L_F = 1 + 2 |kappa_f|`` and
    ``L_G = |kappa_g| + |kappa_c|``.
    """
    lip_f = 1.0 + 2.0 * abs(kappa_f)
    lip_g = abs(kappa_g) + abs(kappa_c)
    if not lip_g < lam:
        raise ConfigurationError(f"dissipativity violated: L_G = {lip_g} is not < lambda = {lam}")
    pair = ReactionPair(
        f=lambda xi, u, v: np.sin(u) + kappa_f * (1.0 + xi / length) * v,
        g=lambda xi, u, v: kappa_g * np.sin(v) + kappa_c * u,
        lip_f=lip_f,
        lip_g=lip_g,
        name="nonlinear",
        params={"kappa_f": kappa_f, "kappa_g": kappa_g, "kappa_c": kappa_c},
    )
    return SystemSpec(
        basis_slow=build_basis(length, mode_count, 0.0),
        basis_fast=build_basis(length, mode_count, lam),
        reactions=pair,
        q1=CovarianceSpectrum.white(mode_count, invertible=False),
        q2=CovarianceSpectrum.white(mode_count),
        horizon=float(horizon),
    )


BUILTIN_SYSTEMS = {"linear": builtin_linear, "nonlinear": builtin_nonlinear}


def build_system(name: str, *, length: float, mode_count: int, lam: float, horizon: float, **params) -> SystemSpec:
    """Construct a built-in system by its config name."""
    if name == "linear":
        p = {"a": -1.0, "b": 1.0, "c": 0.5, "d": 0.0, "q1": 1.0, "q2": 1.0}
        unknown = set(params) - set(p)
        if unknown:
            raise ConfigurationError(f"unknown parameters for 'linear': {sorted(unknown)}")
        p.update(params)
        return builtin_linear(lam=lam, length=length, mode_count=mode_count, horizon=horizon, **p)
    if name == "nonlinear":
        p = {"kappa_f": 0.5, "kappa_g": 0.3, "kappa_c": 0.2}
        unknown = set(params) - set(p)
        if unknown:
            raise ConfigurationError(f"unknown parameters for 'nonlinear': {sorted(unknown)}")
        p.update(params)
        return builtin_nonlinear(length=length, mode_count=mode_count, lam=lam, horizon=horizon, **p)
    raise ConfigurationError(f"unknown system {name!r}; expected one of {sorted(BUILTIN_SYSTEMS)}")
