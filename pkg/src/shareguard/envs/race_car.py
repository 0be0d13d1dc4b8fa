"""Friction-limited planar bicycle model for the race car.

State is (x, y, heading, vx, vy, heading_rate) in world frame.  Control is
(steer, gas, brake) in [-1, 1] x [0, 1] x [-1, 0].  Internally the car has
a single longitudinal body speed; world velocities are that speed resolved
along the heading.  When the lateral acceleration demanded by the steering
geometry exceeds the friction budget mu * g, yaw authority is scaled down
by the available fraction (the car understeers, i.e. skids).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

STATE_DIM = 6
CONTROL_DIM = 3


@dataclass(frozen=True)
class RaceCarParams:
    steer_max: float = 0.5     # full-scale steering angle [rad]
    a_gas: float = 6.0         # full-throttle acceleration [m/s^2]
    a_brake: float = 10.0      # full-brake deceleration scale [m/s^2]
    wheelbase: float = 0.3     # [m]
    mu: float = 1.0            # tire friction coefficient
    gravity: float = 9.81
    drag: float = 0.5          # speed damping [1/s]; bounds the top speed


def _yaw_rate(speed: np.ndarray, steer: np.ndarray, p: RaceCarParams) -> np.ndarray:
    """No-slip kinematic yaw rate, scaled down when the implied lateral
    acceleration exceeds the friction budget."""
    kin = speed * np.tan(steer) / p.wheelbase
    lat = np.abs(speed * kin)
    budget = p.mu * p.gravity
    scale = np.where(lat > budget, budget / np.maximum(lat, 1e-12), 1.0)
    return kin * scale


def slip_engaged(speed, steer, params: RaceCarParams = RaceCarParams()) -> np.ndarray:
    """Whether the friction limit truncates the kinematic yaw rate."""
    speed = np.asarray(speed, dtype=float)
    steer = np.asarray(steer, dtype=float)
    kin = speed * np.tan(steer) / params.wheelbase
    return np.abs(speed * kin) > params.mu * params.gravity


def _deriv(pose: np.ndarray, controls: np.ndarray, p: RaceCarParams) -> np.ndarray:
    """Derivative of the internal pose (x, y, heading, body_speed)."""
    heading = pose[..., 2]
    speed = pose[..., 3]
    steer = controls[..., 0] * p.steer_max
    accel = controls[..., 1] * p.a_gas + controls[..., 2] * p.a_brake - p.drag * speed
    # braking saturates at standstill rather than reversing the car
    accel = np.where((speed <= 0.0) & (accel < 0.0), 0.0, accel)
    yaw = _yaw_rate(np.maximum(speed, 0.0), steer, p)
    return np.stack(
        [speed * np.cos(heading), speed * np.sin(heading), yaw, accel], axis=-1
    )


def _to_pose(states: np.ndarray) -> np.ndarray:
    heading = states[..., 2]
    body_speed = states[..., 3] * np.cos(heading) + states[..., 4] * np.sin(heading)
    return np.stack([states[..., 0], states[..., 1], heading, body_speed], axis=-1)


def _to_state(pose: np.ndarray, controls: np.ndarray, p: RaceCarParams) -> np.ndarray:
    heading = pose[..., 2]
    speed = np.maximum(pose[..., 3], 0.0)
    steer = controls[..., 0] * p.steer_max
    yaw = _yaw_rate(speed, steer, p)
    return np.stack(
        [
            pose[..., 0],
            pose[..., 1],
            heading,
            speed * np.cos(heading),
            speed * np.sin(heading),
            yaw,
        ],
        axis=-1,
    )


def step(states, controls, dt: float, params: RaceCarParams = RaceCarParams()) -> np.ndarray:
    """Advance one RK4 step with the control held constant.  Vectorized over
    leading batch dimensions."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if states.shape[-1] != STATE_DIM:
        raise DomainError(f"race car state has {states.shape[-1]} dims, expected {STATE_DIM}")
    if controls.shape[-1] != CONTROL_DIM:
        raise DomainError(f"race car control has {controls.shape[-1]} dims, expected {CONTROL_DIM}")
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
        raise DomainError("non-finite state or control")
    pose = _to_pose(states)
    k1 = _deriv(pose, controls, params)
    k2 = _deriv(pose + 0.5 * dt * k1, controls, params)
    k3 = _deriv(pose + 0.5 * dt * k2, controls, params)
    k4 = _deriv(pose + dt * k3, controls, params)
    pose = pose + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _to_state(pose, controls, params)
