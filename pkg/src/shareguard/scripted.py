"""Scripted control sources standing in for a human operator.

Each source maps (tick, time, state) to a control vector inside the box.
The adversarial sources deliberately push toward the safety boundary: the
balance bot variant commands the base away from the recovery direction,
the race car variant holds full throttle with slow full-scale steering
sweeps.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .sampling import ControlSpace


class ScriptedUser:
    kind = "base"

    def __init__(self, space: ControlSpace, seed: int = 0):
        self.space = space
        self.rng = np.random.default_rng(np.uint64(seed))

    def get(self, tick: int, t: float, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.space.lows, self.space.highs)


class ConstantUser(ScriptedUser):
    kind = "constant"

    def __init__(self, space, seed=0, value=None):
        super().__init__(space, seed)
        self.value = self._clip(np.asarray(
            value if value is not None else np.zeros(space.dims), dtype=float))

    def get(self, tick, t, state):
        return self.value.copy()


class SinusoidUser(ScriptedUser):
    kind = "sinusoid"

    def __init__(self, space, seed=0, period: float = 4.0, amplitude: float = 1.0):
        super().__init__(space, seed)
        self.period = period
        self.amplitude = amplitude
        self.center = (space.highs + space.lows) / 2.0
        self.half = (space.highs - space.lows) / 2.0

    def get(self, tick, t, state):
        phase = 2.0 * np.pi * t / self.period
        return self._clip(self.center + self.amplitude * self.half * np.sin(phase))


class RandomWalkUser(ScriptedUser):
    kind = "random_walk"

    def __init__(self, space, seed=0, rate: float = 2.0, sigma: float = 1.0):
        super().__init__(space, seed)
        self.rate = rate
        self.sigma = sigma * (space.highs - space.lows) / 2.0
        self.center = (space.highs + space.lows) / 2.0
        self._u = self.rng.uniform(space.lows, space.highs)

    def get(self, tick, t, state):
        dt = 0.02
        drift = self.rate * (self.center - self._u) * dt
        self._u = self._clip(self._u + drift + self.sigma * np.sqrt(dt) * self.rng.normal(size=self.space.dims))
        return self._u.copy()


class AdversarialUser(ScriptedUser):
    """Limit-testing operator: full-scale destabilizing pokes separated by
    neutral rests, the probing behavior observed in live operators."""

    kind = "adversarial"

    def __init__(self, space, seed=0, poke: float = 0.8, rest: float = 1.2):
        super().__init__(space, seed)
        self.poke = poke
        self.rest = rest

    def get(self, tick, t, state):
        cycle, phase = divmod(t, self.poke + self.rest)
        u = np.zeros(self.space.dims)
        if self.space.dims == 1:
            if phase < self.poke:
                # push the base away from the recovery direction
                pitch = float(state[0])
                u[0] = -np.sign(pitch) if abs(pitch) > 1e-3 else 1.0
            return self._clip(u)
        if phase < self.poke:
            # full gas with alternating full-scale steering
            u[0] = 1.0 if int(cycle) % 2 == 0 else -1.0
            u[1] = self.space.highs[1]
        else:
            u[1] = 0.3 * self.space.highs[1]
        return self._clip(u)


class ReplayUser(ScriptedUser):
    """Replays a recorded input stream, one vector per tick, holding the
    last vector past the end of the file."""

    kind = "replay"

    def __init__(self, space, seed=0, path=None):
        super().__init__(space, seed)
        if path is None:
            raise ConfigError("replay user needs a path")
        rows = []
        with open(path) as f:
            for line in f:
                if line.strip() and not line.startswith("#"):
                    rows.append([float(v) for v in line.split()])
        if not rows:
            raise ConfigError(f"replay file {path} holds no input rows")
        self.stream = np.array(rows)
        if self.stream.shape[1] != space.dims:
            raise ConfigError(
                f"replay file has {self.stream.shape[1]} dims, control box has {space.dims}")

    def get(self, tick, t, state):
        row = self.stream[min(tick, len(self.stream) - 1)]
        return self._clip(row.copy())


_KINDS = {
    "constant": ConstantUser,
    "sinusoid": SinusoidUser,
    "random_walk": RandomWalkUser,
    "adversarial": AdversarialUser,
    "replay": ReplayUser,
}


def make_scripted_user(kind: str, space: ControlSpace, seed: int = 0, **params) -> ScriptedUser:
    if kind not in _KINDS:
        raise ConfigError(f"unknown scripted user kind {kind!r}; choose from {sorted(_KINDS)}")
    return _KINDS[kind](space, seed=seed, **params)
