"""Receding-horizon batch rollouts with per-step safety checks.

For every sampled control, the model is forward-predicted over the horizon
with the sample held constant, optionally perturbed by seeded Gaussian
noise, and checked against the inflated safety predicate after each step.
Prediction stops at the first unsafe step.  Results are a pure function of
(model, env, state, samples, horizon, tick_index): noise is drawn from
counted streams keyed by (noise_seed, tick_index, step), and the batch is
processed in fixed-size chunks so neither worker count nor scheduling can
perturb the arithmetic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .sampling import SampleSet

CHUNK = 2048


@dataclass(frozen=True)
class HorizonConfig:
    t_steps: int
    dt: float
    noise_sigma: tuple[float, ...] | float = 0.0  # per-state-dim std dev
    noise_seed: int = 0

    def __post_init__(self):
        if self.t_steps < 1:
            raise ConfigError(f"t_steps must be >= 1, got {self.t_steps}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        sig = np.atleast_1d(np.asarray(self.noise_sigma, dtype=float))
        if np.any(sig < 0):
            raise ConfigError("noise sigmas must be >= 0")

    def sigmas(self, state_dim: int) -> np.ndarray:
        sig = np.atleast_1d(np.asarray(self.noise_sigma, dtype=float))
        if sig.size == 1:
            return np.full(state_dim, sig[0])
        if sig.size != state_dim:
            raise ConfigError(f"noise_sigma has {sig.size} entries for state dim {state_dim}")
        return sig


@dataclass
class RolloutBatch:
    """Predicted trajectories and safety verdicts for one sample set.

    trajectories[i, 0] is the shared start state; entries past the first
    unsafe (or non-finite) prediction are NaN, never stale.  fully_safe[i]
    holds iff all t_steps predicted states are safe.
    """

    sample_set: SampleSet
    t_steps: int
    trajectories: np.ndarray = field(repr=False)  # (n, t_steps + 1, d)
    safe_steps: np.ndarray = field(repr=False)    # (n,) int
    fully_safe: np.ndarray = field(repr=False)    # (n,) bool

    @property
    def n(self) -> int:
        return self.trajectories.shape[0]


class RolloutScratch:
    """Reusable result buffers for a loop that rolls out every tick.

    Passing one to rollout_batch avoids megabyte-scale allocations per
    tick (a real-time jitter source).  Batches returned against a scratch
    alias its buffers and stay valid only until the next call with it.
    """

    def __init__(self):
        self.trajectories = None
        self.safe_steps = None

    def arrays(self, n: int, t_steps: int, d: int):
        shape = (n, t_steps + 1, d)
        if self.trajectories is None or self.trajectories.shape != shape:
            self.trajectories = np.empty(shape)
            self.safe_steps = np.empty(n, dtype=np.int64)
        self.safe_steps[:] = 0
        return self.trajectories, self.safe_steps


def percent_safe(batch: RolloutBatch) -> float:
    """Fraction of samples whose whole predicted trajectory stays safe."""
    if batch.n == 0:
        raise DomainError("empty rollout batch")
    return float(np.count_nonzero(batch.fully_safe)) / batch.n


def _step_noise(noise_seed: int, tick_index: int, step: int, n: int, dim: int) -> np.ndarray:
    """Counted noise block for one prediction step: row i belongs to sample i."""
    seq = np.random.SeedSequence(entropy=np.uint64(noise_seed),
                                 spawn_key=(np.uint32(tick_index), np.uint32(step)))
    return np.random.Generator(np.random.Philox(seq)).standard_normal((n, dim))


def rollout_one(model, env, x_t, u, horizon: HorizonConfig, tick_index: int = 0,
                sample_index: int = 0, n_samples: int = 1):
    """Scalar reference rollout for one control sample.

    With noise enabled, (sample_index, n_samples) locate this sample's row
    in the counted noise blocks so a standalone call reproduces the exact
    batch row.  Returns (trajectory (t_steps+1, d), safe_steps, fully_safe).
    """
    x_t = np.asarray(x_t, dtype=float)
    u = np.asarray(u, dtype=float)
    d = x_t.shape[0]
    sigma = horizon.sigmas(d)
    noisy = bool(np.any(sigma > 0))
    dtype = getattr(model, "rollout_dtype", np.float64)
    make_session = getattr(model, "predict_session", None)
    predict = (make_session(dtype=dtype) if make_session is not None
               else model.predict_batch)
    sigma_t = sigma.astype(dtype)
    traj = np.full((horizon.t_steps + 1, d), np.nan)
    traj[0] = x_t
    x = x_t[None, :].astype(dtype)
    u_row = u[None, :].astype(dtype)
    safe_steps = 0
    for step in range(horizon.t_steps):
        x = predict(x, u_row)
        if noisy:
            z = _step_noise(horizon.noise_seed, tick_index, step, n_samples, d)
            x = x + sigma_t * z[sample_index].astype(dtype)
        traj[step + 1] = x[0]
        if not bool(env.is_safe_batch(x)[0]):
            break
        safe_steps += 1
    return traj, safe_steps, safe_steps == horizon.t_steps


def _rollout_chunk(model, env, x_t, samples, horizon, sigma, noise_blocks,
                   lo, hi, trajectories, safe_steps):
    """Roll out the chunk [lo, hi) of the sample axis in place.

    The engine requires env.is_safe_batch to report non-finite states as
    unsafe, which both environments guarantee; a diverged prediction is
    stored at its slot and counted as the unsafe step.  While no sample in
    the chunk has died, the loop stays on a slice-indexed fast path.
    """
    n = hi - lo
    d = x_t.shape[0]
    dtype = getattr(model, "rollout_dtype", np.float64)
    x = np.broadcast_to(x_t, (n, d)).astype(dtype)
    controls = np.ascontiguousarray(samples[lo:hi], dtype=dtype)
    trajectories[lo:hi, 0] = x_t
    make_session = getattr(model, "predict_session", None)
    predict = (make_session(dtype=dtype) if make_session is not None
               else model.predict_batch)
    is_safe_batch = env.is_safe_batch
    sigma_t = sigma.astype(dtype)
    alive = None  # None: every sample in the chunk is still alive
    t_steps = horizon.t_steps
    # a diverging prediction overflowing is handled data (it classifies as
    # unsafe), not a numerical error worth warning about
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(t_steps):
            rows = slice(lo, hi) if alive is None else lo + alive
            nxt = predict(x, controls if alive is None else controls[alive])
            if noise_blocks is not None:
                nxt = nxt + sigma_t * noise_blocks[step][rows].astype(dtype)
            safe = is_safe_batch(nxt)
            trajectories[rows, step + 1] = nxt
            if safe.all():
                x = nxt
                continue
            dead_local = np.flatnonzero(~safe)
            dead = lo + dead_local if alive is None else lo + alive[dead_local]
            safe_steps[dead] = step
            trajectories[dead, step + 2:] = np.nan
            alive = np.flatnonzero(safe) if alive is None else alive[safe]
            if alive.size == 0:
                return
            x = nxt[safe]
    rows = slice(lo, hi) if alive is None else lo + alive
    safe_steps[rows] = t_steps


def rollout_batch(model, env, x_t, sample_set: SampleSet, horizon: HorizonConfig,
                  tick_index: int = 0, workers: int = 1,
                  scratch: RolloutScratch | None = None) -> RolloutBatch:
    """Roll out every sample; semantically N independent rollout_one calls.

    The sample axis is split into fixed CHUNK-sized slices dispatched to a
    worker pool; results are bit-identical for any worker count.
    """
    x_t = np.asarray(x_t, dtype=float)
    if not np.all(np.isfinite(x_t)):
        raise DomainError("non-finite start state")
    n = sample_set.n
    d = x_t.shape[0]
    sigma = horizon.sigmas(d)
    noise_blocks = None
    if np.any(sigma > 0):
        noise_blocks = [
            _step_noise(horizon.noise_seed, tick_index, step, n, d)
            for step in range(horizon.t_steps)
        ]
    # chunks write every slot: predictions up to the stop, NaN tails after it
    if scratch is not None:
        trajectories, safe_steps = scratch.arrays(n, horizon.t_steps, d)
    else:
        trajectories = np.empty((n, horizon.t_steps + 1, d))
        safe_steps = np.zeros(n, dtype=np.int64)
    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if workers <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            _rollout_chunk(model, env, x_t, sample_set.samples, horizon, sigma,
                           noise_blocks, lo, hi, trajectories, safe_steps)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_rollout_chunk, model, env, x_t, sample_set.samples,
                            horizon, sigma, noise_blocks, lo, hi, trajectories, safe_steps)
                for lo, hi in bounds
            ]
            for fut in futures:
                fut.result()
    return RolloutBatch(
        sample_set=sample_set,
        t_steps=horizon.t_steps,
        trajectories=trajectories,
        safe_steps=safe_steps,
        fully_safe=safe_steps == horizon.t_steps,
    )
