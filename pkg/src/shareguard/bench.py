"""Throughput measurement for the shared-control loop.

Runs the real filter tick (batch rollout + selection) against the live
environment for a fixed wall-clock duration and reports achieved tick
rate, per-tick latency, overrun fraction, and trajectory-steps per second.
Measured figures are printed alongside the GPU reference baseline the
loop-rate targets come from (~7000 / ~3500 Hz batch generation, 100 / 60
Hz closed loop, 600k-1M trajectories per second); those are reference
context, not assertions.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass, field

import numpy as np

from .rollout import HorizonConfig, RolloutScratch, rollout_batch
from .safety_filter import select_control
from .sampling import SampleSet
from .scripted import RandomWalkUser

GPU_REFERENCE = {
    "batch_rate_hz": {"balance_bot": 7000.0, "race_car": 3500.0},
    "loop_rate_hz": {"balance_bot": 100.0, "race_car": 60.0},
    "trajectories_per_s": (600_000.0, 1_000_000.0),
}


@dataclass
class BenchResult:
    env_id: str
    n_samples: int
    t_steps: int
    workers: int
    duration: float
    ticks: int
    tick_rate_hz: float
    mean_tick_ms: float
    p99_tick_ms: float
    overrun_fraction: float
    trajectory_steps_per_s: float
    rollouts_per_s: float
    tick_times: list[float] = field(default_factory=list, repr=False)


def bench_ticks(env, model, sample_set: SampleSet, horizon: HorizonConfig,
                duration: float = 10.0, workers: int = 1, seed: int = 0) -> BenchResult:
    """Tick the filter against the live environment as fast as it will go."""
    rng = np.random.default_rng(np.uint64(seed))
    state = env.initial_state(rng)
    user = RandomWalkUser(sample_set.space, seed=seed)
    dt = env.spec.dt
    tick_times: list[float] = []
    steps_done = 0
    tick = 0
    scratch = RolloutScratch()
    # collector pauses are real-time jitter; hold them off during the loop
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        start = time.perf_counter()
        while time.perf_counter() - start < duration:
            u_h = user.get(tick, tick * dt, state)
            t0 = time.perf_counter()
            batch = rollout_batch(model, env, state, sample_set, horizon,
                                  tick_index=tick, workers=workers, scratch=scratch)
            index, _ = select_control(batch, u_h, env=env)
            elapsed = time.perf_counter() - t0
            tick_times.append(elapsed)
            steps_done += int(np.minimum(batch.safe_steps + 1, horizon.t_steps).sum())
            state = env.step(state, sample_set.samples[index])
            if bool(env.is_failed_batch(state[None, :])[0]):
                state = env.initial_state(rng)
            tick += 1
        total = time.perf_counter() - start
    finally:
        if gc_was_enabled:
            gc.enable()
    times = np.array(tick_times)
    return BenchResult(
        env_id=env.spec.env_id,
        n_samples=sample_set.n,
        t_steps=horizon.t_steps,
        workers=workers,
        duration=total,
        ticks=tick,
        tick_rate_hz=tick / total,
        mean_tick_ms=float(times.mean() * 1e3),
        p99_tick_ms=float(np.percentile(times, 99) * 1e3),
        overrun_fraction=float(np.mean(times > dt)),
        trajectory_steps_per_s=steps_done / total,
        rollouts_per_s=tick * sample_set.n / total,
        tick_times=tick_times,
    )


def format_report(results: list[BenchResult], config_hash: str = "") -> str:
    lo, hi = GPU_REFERENCE["trajectories_per_s"]
    lines = [
        f"throughput report  (config {config_hash})",
        f"reference GPU baseline: ~7000 Hz / ~3500 Hz batch generation,"
        f" ~100 Hz / ~60 Hz closed loop, {lo:,.0f}-{hi:,.0f} trajectories/s",
        "",
        f"{'env':<12}{'N':>8}{'T':>5}{'workers':>9}{'ticks/s':>10}"
        f"{'mean ms':>9}{'p99 ms':>9}{'overrun %':>11}{'rollouts/s':>13}{'steps/s':>13}",
    ]
    lines.append("-" * len(lines[-1]))
    for r in results:
        lines.append(
            f"{r.env_id:<12}{r.n_samples:>8}{r.t_steps:>5}{r.workers:>9}"
            f"{r.tick_rate_hz:>10.1f}{r.mean_tick_ms:>9.2f}{r.p99_tick_ms:>9.2f}"
            f"{100 * r.overrun_fraction:>11.2f}{r.rollouts_per_s:>13,.0f}"
            f"{r.trajectory_steps_per_s:>13,.0f}")
    return "\n".join(lines) + "\n"
