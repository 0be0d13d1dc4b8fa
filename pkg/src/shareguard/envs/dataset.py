"""Random-excitation data collection and the dataset file format.

Records (x_t, u_t, x_{t+1}) triples from seeded rollouts of the ground
truth.  The excitation policy is per-episode Ornstein-Uhlenbeck noise over
the control box, clipped; episodes reset on failure or after a fixed
length so the data decorrelates.

File format: a one-line JSON header naming env_id, dims, dt and seed,
then one flat numeric row [x_t..., u_t..., x_{t+1}...] per line.  Values
are written with 17 significant digits so the round trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DomainError

FORMAT_VERSION = 1


@dataclass
class Dataset:
    env_id: str
    dt: float
    seed: int
    x: np.ndarray = field(repr=False)       # (n, state_dim)
    u: np.ndarray = field(repr=False)       # (n, control_dim)
    x_next: np.ndarray = field(repr=False)  # (n, state_dim)
    config_hash: str = ""

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def episode_starts(self) -> np.ndarray:
        """Indices where a new episode begins (x_t does not continue the
        previous row's x_{t+1})."""
        if self.n == 0:
            return np.array([], dtype=int)
        breaks = np.any(self.x[1:] != self.x_next[:-1], axis=1)
        return np.concatenate([[0], np.flatnonzero(breaks) + 1])

    def split(self, holdout_fraction: float) -> tuple["Dataset", "Dataset"]:
        """Deterministic tail split for validation."""
        k = self.n - int(round(self.n * holdout_fraction))
        head = Dataset(self.env_id, self.dt, self.seed, self.x[:k], self.u[:k], self.x_next[:k])
        tail = Dataset(self.env_id, self.dt, self.seed, self.x[k:], self.u[k:], self.x_next[k:])
        return head, tail


class OrnsteinUhlenbeckPolicy:
    """Mean-reverting noise over the control box, clipped to it.

    The attractor is redrawn uniformly per episode so different episodes
    dwell around different operating points (a fixed mid-box attractor
    never visits sustained full-scale commands, leaving whole speed
    regimes out of the data)."""

    def __init__(self, space, rate: float = 2.0, sigma_scale: float = 1.0):
        self.space = space
        self.rate = rate
        self.sigma = sigma_scale * (space.highs - space.lows) / 2.0
        self.center = (space.highs + space.lows) / 2.0
        self._u = None

    def reset(self, rng: np.random.Generator):
        self._u = rng.uniform(self.space.lows, self.space.highs)
        self.center = self.sample_attractor(rng)

    def sample_attractor(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.space.lows, self.space.highs)

    def __call__(self, rng: np.random.Generator, state, dt: float) -> np.ndarray:
        drift = self.rate * (self.center - self._u) * dt
        diffusion = self.sigma * np.sqrt(dt) * rng.normal(size=self.space.dims)
        self._u = np.clip(self._u + drift + diffusion, self.space.lows, self.space.highs)
        return self._u


class DrivingExcitationPolicy(OrnsteinUhlenbeckPolicy):
    """Race-car excitation: episode attractors weighted toward sustained
    throttle with only occasional braking, so the data covers the full
    speed range instead of idling (uniform gas/brake attractors mostly
    cancel and park the car)."""

    def sample_attractor(self, rng: np.random.Generator) -> np.ndarray:
        steer = rng.uniform(-1.0, 1.0)
        gas = rng.uniform(0.0, 1.0) ** 0.5
        brake = 0.0 if rng.uniform() < 0.7 else rng.uniform(-0.5, 0.0)
        return np.array([steer, gas, brake])


def make_excitation_policy(env) -> OrnsteinUhlenbeckPolicy:
    if env.spec.env_id == "race_car":
        return DrivingExcitationPolicy(env.spec.control_space)
    return OrnsteinUhlenbeckPolicy(env.spec.control_space)


def collect_dataset(env, policy, n_steps: int, seed: int,
                    max_episode_steps: int = 400) -> Dataset:
    """Seeded excitation rollouts; returns n_steps (x, u, x') triples.

    Episodes restart from the environment's excitation-state sampler (the
    trial initial state when it has none) after max_episode_steps, on
    divergence, and, for environments whose failure is a dynamics boundary
    (env.reset_on_failure), on failure."""
    if n_steps <= 0:
        raise ConfigError(f"n_steps must be positive, got {n_steps}")
    rng = np.random.default_rng(np.uint64(seed))
    d, m = env.state_dim, env.control_dim
    xs = np.empty((n_steps, d))
    us = np.empty((n_steps, m))
    ys = np.empty((n_steps, d))
    fresh = getattr(env, "excitation_state", env.initial_state)
    reset_on_failure = getattr(env, "reset_on_failure", True)
    state = fresh(rng)
    policy.reset(rng)
    steps_in_episode = 0
    for i in range(n_steps):
        u = np.asarray(policy(rng, state, env.spec.dt), dtype=float)
        nxt = env.step(state, u)
        xs[i] = state
        us[i] = u
        ys[i] = nxt
        state = nxt
        steps_in_episode += 1
        failed = reset_on_failure and bool(env.is_failed_batch(state[None, :])[0])
        if failed or steps_in_episode >= max_episode_steps or not np.all(np.isfinite(state)):
            state = fresh(rng)
            policy.reset(rng)
            steps_in_episode = 0
    return Dataset(env_id=env.spec.env_id, dt=env.spec.dt, seed=int(seed), x=xs, u=us, x_next=ys)


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "env_id": ds.env_id,
        "state_dim": int(ds.x.shape[1]),
        "control_dim": int(ds.u.shape[1]),
        "dt": ds.dt,
        "seed": ds.seed,
        "n": ds.n,
        "config_hash": ds.config_hash,
    }
    with path.open("w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        rows = np.concatenate([ds.x, ds.u, ds.x_next], axis=1)
        for row in rows:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open() as f:
        first = f.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise DomainError(f"{path}:1: malformed dataset header: {e}") from e
        for key in ("env_id", "state_dim", "control_dim", "dt", "seed"):
            if key not in header:
                raise DomainError(f"{path}:1: dataset header is missing {key!r}")
        d = int(header["state_dim"])
        m = int(header["control_dim"])
        width = 2 * d + m
        rows = []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != width:
                raise DomainError(f"{path}:{lineno}: expected {width} values, found {len(vals)}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError as e:
                raise DomainError(f"{path}:{lineno}: non-numeric value: {e}") from e
    arr = np.array(rows) if rows else np.empty((0, width))
    return Dataset(
        env_id=header["env_id"],
        dt=float(header["dt"]),
        seed=int(header["seed"]),
        x=arr[:, :d],
        u=arr[:, d:d + m],
        x_next=arr[:, d + m:],
        config_hash=header.get("config_hash", ""),
    )
