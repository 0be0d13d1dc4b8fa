"""Environment specs, safety predicates, and the runtime Environment objects.

Safety convention: predicates are strict; the exact boundary counts as
unsafe.  is_safe applies the inflated barrier (boundary pulled inward by
inflation_radius to absorb model error); is_failed is the trial-ending
check at the natural collision boundary.  is_failed(s) always implies
not is_safe(s).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DomainError
from ..sampling import ControlSpace
from . import balance_bot, race_car
from .track import Track, TrackParams, generate_track

BALANCE_BOT = "balance_bot"
RACE_CAR = "race_car"


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    dt: float
    control_space: ControlSpace
    physics_params: dict = field(default_factory=dict)
    inflation_radius: float = 0.0
    max_trial_time: float = 20.0

    def __post_init__(self):
        if self.env_id not in (BALANCE_BOT, RACE_CAR):
            raise ConfigError(f"unknown env_id {self.env_id!r}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.inflation_radius < 0:
            raise ConfigError(f"inflation_radius must be >= 0, got {self.inflation_radius}")
        if self.max_trial_time <= 0:
            raise ConfigError(f"max_trial_time must be positive, got {self.max_trial_time}")


def balance_bot_spec(
    dt: float = 0.01,
    inflation_radius: float = 1.45,
    max_trial_time: float = 20.0,
    **physics_overrides,
) -> EnvSpec:
    # the inflation is the hand-tuned viability margin: the band it leaves,
    # |pitch| < pitch_limit - inflation, is small enough that staying inside
    # it over one horizon is a usable proxy for recoverability
    params = {
        "v_max": 28.0, "tau": 2.8, "a_max": 10.0, "length": 1.0,
        "gravity": 9.81, "damping": 0.05, "pitch_limit": float(np.pi / 2),
    }
    params.update(physics_overrides)
    return EnvSpec(
        env_id=BALANCE_BOT,
        dt=dt,
        control_space=ControlSpace(intervals=((-1.0, 1.0),)),
        physics_params=params,
        inflation_radius=inflation_radius,
        max_trial_time=max_trial_time,
    )


def race_car_spec(
    dt: float = 1.0 / 60.0,
    inflation_radius: float = 0.5,
    max_trial_time: float = 30.0,
    **physics_overrides,
) -> EnvSpec:
    params = {
        "steer_max": 0.5, "a_gas": 6.0, "a_brake": 10.0, "wheelbase": 0.3,
        "mu": 1.0, "gravity": 9.81, "drag": 0.5,
        "track_checkpoints": 12, "track_radius": 20.0, "track_radial_noise": 0.3,
        "half_width": 2.5,
    }
    params.update(physics_overrides)
    return EnvSpec(
        env_id=RACE_CAR,
        dt=dt,
        control_space=ControlSpace(intervals=((-1.0, 1.0), (0.0, 1.0), (-1.0, 0.0))),
        physics_params=params,
        inflation_radius=inflation_radius,
        max_trial_time=max_trial_time,
    )


class BalanceBotEnv:
    """Ground-truth balance bot bundled with its safety geometry."""

    state_dim = balance_bot.STATE_DIM
    control_dim = balance_bot.CONTROL_DIM

    def __init__(self, spec: EnvSpec):
        if spec.env_id != BALANCE_BOT:
            raise ConfigError(f"spec is for {spec.env_id}, not {BALANCE_BOT}")
        self.spec = spec
        pp = spec.physics_params
        self.params = balance_bot.BalanceBotParams(
            gravity=pp["gravity"], length=pp["length"], v_max=pp["v_max"],
            tau=pp["tau"], a_max=pp["a_max"], damping=pp["damping"],
            pitch_limit=pp["pitch_limit"],
        )

    def step(self, states, controls) -> np.ndarray:
        return balance_bot.step(states, controls, self.spec.dt, self.params)

    def is_safe_batch(self, states) -> np.ndarray:
        states = np.asarray(states)
        limit = self.params.pitch_limit - self.spec.inflation_radius
        return np.isfinite(states).all(axis=-1) & (np.abs(states[..., 0]) < limit)

    def is_failed_batch(self, states) -> np.ndarray:
        states = np.asarray(states)
        return ~np.isfinite(states).all(axis=-1) | (np.abs(states[..., 0]) >= self.params.pitch_limit)

    def safety_margin_batch(self, states) -> np.ndarray:
        """Signed distance to the inflated boundary, normalized so +1 is
        the safest attainable and 0 the boundary; NaN states map to -inf."""
        states = np.asarray(states)
        limit = self.params.pitch_limit - self.spec.inflation_radius
        margin = (limit - np.abs(states[..., 0])) / limit
        return np.where(np.isfinite(states).all(axis=-1), margin, -np.inf)

    def initial_state(self, rng: np.random.Generator, perturbation: float = 1.0) -> np.ndarray:
        return np.array([
            rng.normal(0.0, 0.01 * perturbation),
            rng.normal(0.0, 0.01 * perturbation),
            0.0,
        ])


class RaceCarEnv:
    """Ground-truth race car on a seeded track."""

    state_dim = race_car.STATE_DIM
    control_dim = race_car.CONTROL_DIM

    def __init__(self, spec: EnvSpec, track_seed: int = 0, track: Track | None = None):
        if spec.env_id != RACE_CAR:
            raise ConfigError(f"spec is for {spec.env_id}, not {RACE_CAR}")
        self.spec = spec
        pp = spec.physics_params
        self.params = race_car.RaceCarParams(
            steer_max=pp["steer_max"], a_gas=pp["a_gas"], a_brake=pp["a_brake"],
            wheelbase=pp["wheelbase"], mu=pp["mu"], gravity=pp["gravity"],
            drag=pp["drag"],
        )
        if track is None:
            track = generate_track(track_seed, TrackParams(
                n_checkpoints=int(pp["track_checkpoints"]),
                radius=pp["track_radius"],
                radial_noise=pp["track_radial_noise"],
                half_width=pp["half_width"],
            ))
        self.track = track

    def step(self, states, controls) -> np.ndarray:
        return race_car.step(states, controls, self.spec.dt, self.params)

    def _positions(self, states) -> np.ndarray:
        pts = np.asarray(states, dtype=float)[:, :2]
        return np.where(np.isfinite(pts), pts, 1e9)

    def is_safe_batch(self, states) -> np.ndarray:
        states = np.asarray(states)
        squeeze = states.ndim == 1
        states2 = np.atleast_2d(states)
        finite = np.isfinite(states2).all(axis=-1)
        limit = self.track.half_width - self.spec.inflation_radius
        out = finite & self.track.classify_distance_lt(self._positions(states2), limit)
        return out[0] if squeeze else out

    def is_failed_batch(self, states) -> np.ndarray:
        states = np.asarray(states)
        squeeze = states.ndim == 1
        states2 = np.atleast_2d(states)
        finite = np.isfinite(states2).all(axis=-1)
        inside = self.track.classify_distance_lt(self._positions(states2), self.track.half_width)
        out = ~finite | ~inside
        return out[0] if squeeze else out

    def safety_margin_batch(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states))
        finite = np.isfinite(states).all(axis=-1)
        limit = self.track.half_width - self.spec.inflation_radius
        dist = self.track.distance_to_centerline(self._positions(states))
        return np.where(finite, (limit - dist) / limit, -np.inf)

    def initial_state(self, rng: np.random.Generator, perturbation: float = 1.0) -> np.ndarray:
        pos, heading = self.track.start_pose()
        lateral = rng.normal(0.0, 0.2 * perturbation)
        heading += rng.normal(0.0, 0.05 * perturbation)
        normal = np.array([-np.sin(heading), np.cos(heading)])
        xy = pos + lateral * normal
        return np.array([xy[0], xy[1], heading, 0.0, 0.0, 0.0])

    # driving off the road ends a trial but is not a dynamics boundary, so
    # excitation episodes keep running and sample poses across the whole
    # track tube (training data must cover every arc the filter predicts on)
    reset_on_failure = False

    def excitation_state(self, rng: np.random.Generator) -> np.ndarray:
        way = self.track.centerline
        i = int(rng.integers(0, way.shape[0] - 1))
        heading = rng.uniform(-np.pi, np.pi)
        offset = rng.uniform(-2.0, 2.0) * self.track.half_width
        tangent = way[i + 1] - way[i]
        normal = np.array([-tangent[1], tangent[0]])
        normal /= max(np.linalg.norm(normal), 1e-12)
        xy = way[i] + offset * normal
        speed = rng.uniform(0.0, self.params.a_gas / self.params.drag)
        return np.array([
            xy[0], xy[1], heading,
            speed * np.cos(heading), speed * np.sin(heading), 0.0,
        ])


def make_env(spec: EnvSpec, seed: int = 0):
    if spec.env_id == BALANCE_BOT:
        return BalanceBotEnv(spec)
    return RaceCarEnv(spec, track_seed=seed)


def _check_state(state, env) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.shape != (env.state_dim,):
        raise DomainError(f"state shape {state.shape} does not match {env.spec.env_id}")
    return state


def is_safe(state, env) -> bool:
    """Strict inflated-barrier safety check for a single state."""
    state = _check_state(state, env)
    return bool(env.is_safe_batch(state[None, :])[0])


def is_failed(state, env) -> bool:
    """Trial-ending check at the natural collision boundary."""
    state = _check_state(state, env)
    return bool(env.is_failed_batch(state[None, :])[0])
