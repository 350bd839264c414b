"""Experiment configuration: YAML schema, validation and seed resolution.

Example::

    system: linear
    params: {a: -1.0, b: 1.0, c: 0.5, d: 0.0}
    N: 64
    L: pi
    lambda: 1.0
    T: 1.0
    alpha: 0.2
    epsilons: [0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625]
    c_h: 0.05
    replicas: 200
    seed: 20240607
    output_dir: runs/default
    drift: {mode: analytic}
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .reaction import SystemSpec, build_system

SEED_ENV = "SLOWFAST_SEED"
DEFAULT_SEED = 20240607

DRIFT_KEYS = {"mode", "burn_in", "window", "h_fast", "n_batches", "cache_step", "max_rel_error"}
DIAGNOSTIC_KEYS = {"fast", "gaps", "residual", "moments", "increments", "hypotheses"}
TOP_KEYS = {
    "system",
    "params",
    "N",
    "L",
    "lambda",
    "T",
    "alpha",
    "epsilons",
    "c_h",
    "replicas",
    "seed",
    "output_dir",
    "drift",
    "diagnostics",
}


def _default_diagnostics():
    return {k: True for k in DIAGNOSTIC_KEYS}


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "linear"
    params: dict = field(default_factory=dict)
    N: int = 64
    L: float = math.pi
    lam: float = 1.0
    T: float = 1.0
    alpha: float = 0.2
    epsilons: tuple = tuple(2.0**-j for j in range(3, 9))
    c_h: float = 0.05
    replicas: int = 200
    seed: int = DEFAULT_SEED
    output_dir: str = "runs"
    drift: dict = field(default_factory=lambda: {"mode": "analytic"})
    diagnostics: dict = field(default_factory=_default_diagnostics)

    def __post_init__(self):
        validate(self)

    def build_spec(self) -> SystemSpec:
        return build_system(
            self.system, length=self.L, mode_count=self.N, lam=self.lam, horizon=self.T, **self.params
        )

    def step(self, eps: float) -> float:
        return self.c_h * eps

    @property
    def slot_width(self) -> float:
        return self.c_h * max(self.epsilons)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["epsilons"] = list(d["epsilons"])
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def validate(cfg: ExperimentConfig):
    eps = np.asarray(cfg.epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0):
        raise ConfigurationError("epsilons must be a non-empty list of positive numbers")
    if np.any(np.diff(eps) >= 0):
        raise ConfigurationError("epsilons must be strictly decreasing")
    if cfg.replicas < 2:
        raise ConfigurationError("replicas must be at least 2")
    if not 0 < cfg.c_h <= 0.1:
        raise ConfigurationError(f"c_h = {cfg.c_h} violates the step guard h <= eps/10")
    if not 0 < cfg.alpha < 0.5:
        raise ConfigurationError("alpha must lie in (0, 1/2)")
    slot = cfg.c_h * eps[0]
    n_slots = cfg.T / slot
    if abs(n_slots - round(n_slots)) > 1e-9 * n_slots:
        raise ConfigurationError(f"the coarsest step {slot} does not divide T = {cfg.T}")
    for e in eps:
        ratio = eps[0] / e
        if abs(np.log2(ratio) - round(np.log2(ratio))) > 1e-9:
            raise ConfigurationError(f"eps = {e} is not the largest eps divided by a power of two")
    mode = cfg.drift.get("mode", "analytic")
    if mode not in ("analytic", "ergodic"):
        raise ConfigurationError(f"drift.mode must be 'analytic' or 'ergodic', got {mode!r}")
    unknown = set(cfg.drift) - DRIFT_KEYS
    if unknown:
        raise ConfigurationError(f"unknown drift keys: {sorted(unknown)}")
    unknown = set(cfg.diagnostics) - DIAGNOSTIC_KEYS
    if unknown:
        raise ConfigurationError(f"unknown diagnostics keys: {sorted(unknown)}")
    cfg.build_spec()


_PI_MULTIPLE = re.compile(r"^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)?\s*\*?\s*pi\s*$")


def _number(value, key):
    """Float, or a string such as ``"pi"`` / ``"2*pi"``."""
    if isinstance(value, str):
        m = _PI_MULTIPLE.match(value.lower())
        try:
            return float(m.group(1) or 1.0) * math.pi if m else float(value)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: cannot read {value!r} as a number") from exc
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{key}: expected a number, got {value!r}")
    return float(value)


def from_mapping(data: dict, source: str = "<config>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigurationError(f"{source}: unknown keys {sorted(unknown)}")
    kw = {}
    for key in ("system", "output_dir"):
        if key in data:
            kw[key] = str(data[key])
    for key in ("L", "T", "alpha", "c_h"):
        if key in data:
            kw[key] = _number(data[key], key)
    if "lambda" in data:
        kw["lam"] = _number(data["lambda"], "lambda")
    for key in ("N", "replicas", "seed"):
        if key in data:
            kw[key] = int(data[key])
    if "epsilons" in data:
        kw["epsilons"] = tuple(_number(e, "epsilons") for e in data["epsilons"])
    if "params" in data:
        kw["params"] = {k: _number(v, f"params.{k}") for k, v in (data["params"] or {}).items()}
    if "drift" in data:
        kw["drift"] = dict(data["drift"] or {})
    if "diagnostics" in data:
        diag = _default_diagnostics()
        diag.update({k: bool(v) for k, v in (data["diagnostics"] or {}).items()})
        kw["diagnostics"] = diag
    try:
        return ExperimentConfig(**kw)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if line.lstrip().startswith(f"{key}:"):
            return i
    return None


def load_config(
    path: str | os.PathLike,
    seed: int | None = None,
    replicas: int | None = None,
    output_dir: str | None = None,
) -> ExperimentConfig:
    """Read a YAML config.  Seed precedence: ``seed`` argument, then $SLOWFAST_SEED, then file."""
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigurationError(f"{where}: invalid YAML ({exc})") from exc
    if isinstance(data, dict):
        for key in data:
            if key not in TOP_KEYS:
                line = _line_of(text, key)
                raise ConfigurationError(f"{path}:{line}: unknown key {key!r}")
    if seed is None and os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    if seed is not None:
        data["seed"] = seed
    if replicas is not None:
        data["replicas"] = replicas
    if output_dir is not None:
        data["output_dir"] = output_dir
    return from_mapping(data, str(path))
