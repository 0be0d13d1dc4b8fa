"""Minimal-intervention control selection over batch rollouts.

Of the sampled controls whose predicted trajectories stay safe over the
whole horizon, apply the one Euclidean-closest to the human's input; ties
break toward the lower sample index.  When no sample is fully safe, fall
back to the sample that stays safe longest (ties by distance to the human
input, then lower index) and flag the decision loudly.  The selected
control is always a vetted sample, never an arbitrary vector.

A dense brute-force oracle over ground-truth dynamics realizes the exact
selection at toy scale for convergence testing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .rollout import HorizonConfig, RolloutBatch, percent_safe, rollout_batch
from .sampling import SampleSet, grid


@dataclass
class SharedControlDecision:
    tick_index: int
    u_h: np.ndarray              # human input after box clamping
    u_r: np.ndarray              # applied control
    deviation: float             # ||u_h - u_r||
    n_safe: int
    percent_safe: float
    fallback_used: bool
    input_clamped: bool
    compute_time: float
    mode: str = "mpmi"
    batch: RolloutBatch | None = field(default=None, repr=False)


def deviation_cost(controls: np.ndarray, u_h: np.ndarray) -> np.ndarray:
    """Euclidean distance from each candidate control to the human input."""
    return np.linalg.norm(np.atleast_2d(controls) - u_h, axis=1)


class GroundTruthModel:
    """Adapter exposing an environment's own dynamics as a predictor."""

    def __init__(self, env):
        self.env = env

    def predict_batch(self, states, controls, lift_buf=None):
        return self.env.step(states, controls)


def select_control(batch: RolloutBatch, u_h: np.ndarray, env=None) -> tuple[int, bool]:
    """Index of the applied sample and whether the fallback was used.

    Fallback ranking: longest predicted survival, then (when the
    environment provides a safety margin) the least-bad predicted stop
    state in coarse 10% bins, then closeness to the human input, then the
    lower index.  Without the margin key, a state already inside the
    inflated band would rank every sample equal and hand the tick straight
    back to the (possibly destabilizing) input.
    """
    safe_idx = np.flatnonzero(batch.fully_safe)
    if safe_idx.size > 0:
        costs = deviation_cost(batch.sample_set.samples[safe_idx], u_h)
        return int(safe_idx[int(np.argmin(costs))]), False
    best = batch.safe_steps.max()
    cand = np.flatnonzero(batch.safe_steps == best)
    margin_fn = getattr(env, "safety_margin_batch", None)
    if margin_fn is not None and cand.size > 1:
        stop_slot = min(int(best) + 1, batch.t_steps)
        margins = np.asarray(margin_fn(batch.trajectories[cand, stop_slot]))
        bins = np.where(np.isfinite(margins), np.floor(margins / 0.1), -np.inf)
        top = bins == bins.max()
        cand = cand[top]
    costs = deviation_cost(batch.sample_set.samples[cand], u_h)
    return int(cand[int(np.argmin(costs))]), True


def filter_step(tick_index: int, x_t, u_h, model, env, sample_set: SampleSet,
                horizon: HorizonConfig, workers: int = 1,
                scratch=None) -> SharedControlDecision:
    """One shared-control tick: roll out every sample, keep the fully-safe
    ones, apply the minimal-deviation selection.  Total: pathological
    inputs surface through the fallback, never as an exception."""
    start = time.perf_counter()
    u_h_clamped, clamped = sample_set.space.clamp(u_h)
    batch = rollout_batch(model, env, x_t, sample_set, horizon,
                          tick_index=tick_index, workers=workers, scratch=scratch)
    index, fallback = select_control(batch, u_h_clamped, env=env)
    u_r = batch.sample_set.samples[index].copy()
    return SharedControlDecision(
        tick_index=tick_index,
        u_h=u_h_clamped,
        u_r=u_r,
        deviation=float(np.linalg.norm(u_h_clamped - u_r)),
        n_safe=int(np.count_nonzero(batch.fully_safe)),
        percent_safe=percent_safe(batch),
        fallback_used=fallback,
        input_clamped=clamped,
        compute_time=time.perf_counter() - start,
        batch=batch,
    )


def dense_oracle(x_t, u_h, env, dense_counts, horizon: HorizonConfig) -> np.ndarray:
    """Exhaustive selection over a very dense grid rolled out noise-free
    with the ground-truth dynamics; the reference the sampled filter
    converges to as its grid refines.  Toy-scale only: cost grows with the
    product of dense_counts."""
    samples = grid(env.spec.control_space, dense_counts)
    quiet = HorizonConfig(t_steps=horizon.t_steps, dt=horizon.dt,
                          noise_sigma=0.0, noise_seed=horizon.noise_seed)
    u_h_clamped, _ = samples.space.clamp(u_h)
    batch = rollout_batch(GroundTruthModel(env), env, x_t, samples, quiet)
    index, _ = select_control(batch, u_h_clamped, env=env)
    return samples.samples[index].copy()
