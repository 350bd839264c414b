"""Spectral Monte Carlo toolkit for additive-noise slow-fast reaction-diffusion systems."""

__version__ = "0.1.0"

from .averaging import AveragedDrift, averaged_drift_analytic, solve_averaged
from .config import ExperimentConfig, load_config
from .coupled import simulate_coupled, simulate_khasminskii
from .errors import ConfigurationError, PrecisionError
from .reaction import SystemSpec, build_system
from .spectral import EigenBasis, build_basis

__all__ = [
    "AveragedDrift",
    "ConfigurationError",
    "EigenBasis",
    "ExperimentConfig",
    "PrecisionError",
    "SystemSpec",
    "averaged_drift_analytic",
    "build_basis",
    "build_system",
    "load_config",
    "simulate_coupled",
    "simulate_khasminskii",
    "solve_averaged",
]
