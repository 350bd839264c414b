"""Run-directory persistence: CSV tables, JSON-lines metadata, plot data and trajectory dumps.

Numbers are written with 17 significant digits so tables round-trip exactly
and identical inputs produce byte-identical files.  Only ``meta.jsonl``
carries timestamps.
"""
from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import yaml

from .config import ExperimentConfig

__all__ = ["RunDirectory", "format_value", "read_csv", "read_meta", "versions"]


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def versions() -> dict:
    from . import __version__

    return {
        "slowfast": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_meta(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class RunDirectory:
    """A directory owned by one run; a single writer per directory."""

    path: Path

    def __post_init__(self):
        self.path = Path(self.path)
        (self.path / "plotdata").mkdir(parents=True, exist_ok=True)

    def write_config(self, config: ExperimentConfig):
        text = yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=False)
        (self.path / "config.yaml").write_text(text)

    def write_table(self, name: str, header, rows):
        """``rows`` are sequences aligned with ``header`` or dicts keyed by it."""
        with open(self.path / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                if isinstance(row, dict):
                    row = [row[k] for k in header]
                w.writerow([format_value(x) for x in row])

    def write_plotdata(self, name: str, x, y, yerr=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        yerr = np.zeros_like(y) if yerr is None else np.asarray(yerr, dtype=float)
        self.write_table(f"plotdata/{name}.csv", ["x", "y", "yerr"], zip(x, y, yerr))

    def append_meta(self, stage: str, config: ExperimentConfig, **extra):
        record = {
            "stage": stage,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "seed": config.seed,
            "config_hash": config.fingerprint(),
            "versions": versions(),
        }
        record.update(extra)
        with open(self.path / "meta.jsonl", "a") as fh:
            fh.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")

    def save_trajectory(self, name: str, times, **fields):
        """Long-format columnar ``.npz`` dump with one row per (time, replica, mode).

        Each keyword is a ``(n_times, replicas, N)`` state array and becomes a
        value column next to the ``time``, ``replica`` and ``mode`` columns.
        """
        times = np.asarray(times, dtype=float)
        arrays = {k: np.asarray(v, dtype=float) for k, v in fields.items()}
        shape = next(iter(arrays.values())).shape
        if any(a.shape != shape for a in arrays.values()) or shape[0] != len(times) or len(shape) != 3:
            raise ValueError("state arrays must share the shape (n_times, replicas, N)")
        t_idx, r_idx, k_idx = np.indices(shape).reshape(3, -1)
        columns = {"time": times[t_idx], "replica": r_idx, "mode": k_idx + 1}
        columns.update({k: a.reshape(-1) for k, a in arrays.items()})
        np.savez(self.path / name, **columns)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")
