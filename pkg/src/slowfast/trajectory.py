from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Trajectory:
    """Recorded states of one (possibly replica-batched) path.

    ``states[i]`` is the coefficient array at ``times[i]``; its shape is
    ``(..., N)`` with any replica axes in front of the mode axis.
    """

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ConfigurationError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[i], t, rtol=0, atol=1e-9 * max(1.0, abs(t))):
            raise KeyError(f"time {t} was not recorded")
        return self.states[i]


def step_count(horizon: float, h: float) -> int:
    """Number of steps of size ``h`` in ``horizon``; they must tile it exactly."""
    if h <= 0 or horizon <= 0:
        raise ConfigurationError("step and horizon must be positive")
    n = int(round(horizon / h))
    if n < 1 or abs(n * h - horizon) > 1e-9 * horizon:
        raise ConfigurationError(f"step {h} does not divide horizon {horizon}")
    return n


class Recorder:
    """Collects states at chosen step indices while a path is advanced.

    The final step is always kept, so ``trajectory().final`` is the end state.
    """

    def __init__(self, n_steps: int, h: float, every: int | None = 1, steps=None, t0: float = 0.0):
        wanted = {n_steps}
        if every:
            wanted.update(range(0, n_steps + 1, every))
        if steps is not None:
            wanted.update(int(s) for s in steps if 0 <= s <= n_steps)
        self.wanted = wanted
        self.h = h
        self.t0 = t0
        self._times: list[float] = []
        self._states: list[np.ndarray] = []

    def __call__(self, step: int, state: np.ndarray):
        if step in self.wanted:
            self._times.append(self.t0 + step * self.h)
            self._states.append(np.array(state, copy=True))

    def trajectory(self) -> Trajectory:
        return Trajectory(np.asarray(self._times), np.asarray(self._states))
