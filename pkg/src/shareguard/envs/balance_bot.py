"""Planar wheeled-inverted-pendulum ("balance bot") dynamics.

State is (pitch, pitch_rate, speed): body angle from vertical [rad], its
rate [rad/s], and the linear velocity of the wheel base [m/s].  The single
control u in [-1, 1] commands a target base velocity u * v_max; the base
tracks it through a first-order lag, and the resulting base acceleration
tips the body.  Upright with zero command is an unstable equilibrium.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

STATE_DIM = 3
CONTROL_DIM = 1


@dataclass(frozen=True)
class BalanceBotParams:
    # tau ~ v_max / a_max keeps the velocity servo in its linear regime, so
    # commands act as smooth accelerations with natural velocity damping;
    # the wide speed budget lets boundary-riding outlast a full trial
    gravity: float = 9.81        # m/s^2
    length: float = 1.0          # pivot-to-CoM distance [m]
    v_max: float = 28.0          # full-scale commanded base speed [m/s]
    tau: float = 2.8             # base velocity tracking time constant [s]
    a_max: float = 10.0          # base acceleration clamp [m/s^2]
    damping: float = 0.05        # viscous pitch damping coefficient
    pitch_limit: float = np.pi / 2.0  # body hits the ground at this |pitch|


def _deriv(states: np.ndarray, controls: np.ndarray, p: BalanceBotParams) -> np.ndarray:
    pitch = states[..., 0]
    pitch_rate = states[..., 1]
    speed = states[..., 2]
    v_cmd = controls[..., 0] * p.v_max
    accel = np.clip((v_cmd - speed) / p.tau, -p.a_max, p.a_max)
    pitch_acc = (p.gravity * np.sin(pitch) - accel * np.cos(pitch)) / p.length \
        - p.damping * pitch_rate
    return np.stack([pitch_rate, pitch_acc, accel], axis=-1)


def step(states, controls, dt: float, params: BalanceBotParams = BalanceBotParams()) -> np.ndarray:
    """Advance one timestep with a fixed-step 4th-order Runge-Kutta stage,
    the control held constant across the step.  Vectorized over any number
    of leading batch dimensions.
    """
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if states.shape[-1] != STATE_DIM:
        raise DomainError(f"balance bot state has {states.shape[-1]} dims, expected {STATE_DIM}")
    if controls.shape[-1] != CONTROL_DIM:
        raise DomainError(f"balance bot control has {controls.shape[-1]} dims, expected {CONTROL_DIM}")
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
        raise DomainError("non-finite state or control")
    k1 = _deriv(states, controls, params)
    k2 = _deriv(states + 0.5 * dt * k1, controls, params)
    k3 = _deriv(states + 0.5 * dt * k2, controls, params)
    k4 = _deriv(states + dt * k3, controls, params)
    return states + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
