"""The live shared-control loop and headless campaign runner.

One logical thread owns the loop: read the latest human input (zero-order
hold), run the safety filter (or pass the input through in user-only
mode), step the ground-truth environment with the applied control, emit
the decision, and stop on failure or at the time cap.  Pacing modes:
"fast" free-runs in simulated time (campaigns), "realtime" sleeps to the
environment's dt, "lockstep" advances one tick per received input (used
for deterministic bridge transcripts).  Tick overruns are counted, never
silently dropped; the loop always finishes its safety computation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .metrics import (
    MPMI,
    OUTCOME_FAILED,
    OUTCOME_SURVIVED,
    USER_ONLY,
    TickRecord,
    TrialRecord,
    deviation_to_closest_safe,
)
from .rollout import HorizonConfig, RolloutScratch
from .safety_filter import SharedControlDecision, filter_step
from .sampling import SampleSet

PACING_FAST = "fast"
PACING_REALTIME = "realtime"
PACING_LOCKSTEP = "lockstep"


OUTCOME_ABORTED = "aborted"  # lockstep client went away; never summarized


@dataclass
class LoopOptions:
    mode: str = MPMI
    pacing: str = PACING_FAST
    workers: int = 1
    # user-only trials still roll out the batch so skill/style metrics are
    # logged for both conditions; disable to trade metrics for speed
    metrics_in_passthrough: bool = True
    lockstep_timeout: float = 10.0

    def __post_init__(self):
        if self.mode not in (MPMI, USER_ONLY):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.pacing not in (PACING_FAST, PACING_REALTIME, PACING_LOCKSTEP):
            raise ConfigError(f"unknown pacing {self.pacing!r}")


class HeldInput:
    """Zero-order hold over an input source.  A source returning None keeps
    the previous vector; before any input arrives the held value is the
    box-clamped zero vector."""

    def __init__(self, space):
        self.space = space
        zero, _ = space.clamp(np.zeros(space.dims))
        self._held = zero

    def read(self, source, tick: int, t: float, state) -> np.ndarray:
        fresh = source.get(tick, t, state)
        if fresh is not None:
            self._held, _ = self.space.clamp(np.asarray(fresh, dtype=float))
        return self._held.copy()


def run_trial(env, model, sample_set: SampleSet, horizon: HorizonConfig,
              user, trial_id: str, seed: int, options: LoopOptions,
              sink=None, mode_provider=None, initial_state=None) -> TrialRecord:
    """Run one trial to failure or the time cap; returns its full record.

    sink, if given, is called as sink(tick_index, state, decision) after
    every tick and sink.trial_event(...) at start/end when it has one.
    mode_provider, if given, is polled each tick for live mode toggles.
    """
    dt = env.spec.dt
    max_ticks = int(round(env.spec.max_trial_time / dt))
    rng = np.random.default_rng(np.uint64(seed))
    state = env.initial_state(rng) if initial_state is None else np.asarray(initial_state, dtype=float)
    held = HeldInput(sample_set.space)
    record = TrialRecord(
        trial_id=trial_id, env_id=env.spec.env_id, mode=options.mode, seed=seed,
        outcome=OUTCOME_SURVIVED, duration=env.spec.max_trial_time,
        max_trial_time=env.spec.max_trial_time,
    )
    if sink is not None and hasattr(sink, "trial_event"):
        sink.trial_event("start", trial_id, 0)
    scratch = RolloutScratch()
    wall_start = time.perf_counter()
    mode = options.mode
    for tick in range(max_ticks):
        t = tick * dt
        if options.pacing == PACING_LOCKSTEP:
            if not user.wait_for_input(timeout=options.lockstep_timeout):
                record.outcome = OUTCOME_ABORTED
                record.duration = tick * dt
                break
        if mode_provider is not None:
            mode = mode_provider() or mode
        u_h = held.read(user, tick, t, state)

        tick_start = time.perf_counter()
        if mode == MPMI:
            decision = filter_step(tick, state, u_h, model, env, sample_set,
                                   horizon, workers=options.workers, scratch=scratch)
            u_r = decision.u_r
        else:
            decision = _passthrough_decision(tick, state, u_h, model, env,
                                             sample_set, horizon, options, scratch)
            u_r = decision.u_r
        compute_time = time.perf_counter() - tick_start
        decision.compute_time = compute_time
        decision.mode = mode
        if compute_time > dt:
            record.overrun_ticks += 1

        dev_safe = (deviation_to_closest_safe(decision.batch, u_h)
                    if decision.batch is not None else 0.0)
        record.ticks.append(TickRecord(
            t=t, state=state.copy(), u_h=u_h, u_r=u_r.copy(),
            deviation_to_closest_safe=float(dev_safe),
            percent_safe=decision.percent_safe,
            fallback_used=decision.fallback_used,
            compute_time=compute_time,
        ))
        state = env.step(state, u_r)
        if sink is not None:
            sink(tick, state, decision)
        if bool(env.is_failed_batch(state[None, :])[0]):
            record.outcome = OUTCOME_FAILED
            record.duration = (tick + 1) * dt
            break
        if options.pacing == PACING_REALTIME:
            deadline = wall_start + (tick + 1) * dt
            delay = deadline - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
    if sink is not None and hasattr(sink, "trial_event"):
        sink.trial_event(record.outcome, trial_id, len(record.ticks))
    return record


def _passthrough_decision(tick, state, u_h, model, env, sample_set, horizon,
                          options: LoopOptions, scratch=None) -> SharedControlDecision:
    if options.metrics_in_passthrough:
        probe = filter_step(tick, state, u_h, model, env, sample_set, horizon,
                            workers=options.workers, scratch=scratch)
        n_safe, pct, batch = probe.n_safe, probe.percent_safe, probe.batch
    else:
        n_safe, pct, batch = 0, 0.0, None
    u_clamped, clamped = sample_set.space.clamp(u_h)
    return SharedControlDecision(
        tick_index=tick, u_h=u_clamped, u_r=u_clamped.copy(), deviation=0.0,
        n_safe=n_safe, percent_safe=pct, fallback_used=False,
        input_clamped=clamped, compute_time=0.0, mode=USER_ONLY, batch=batch,
    )


def run_campaign(env_factory, model, sample_set, horizon, user_factory,
                 seeds, modes=(USER_ONLY, MPMI), options: LoopOptions | None = None,
                 sink=None) -> list[TrialRecord]:
    """Paired-seed campaign: for every seed, each mode sees the identical
    environment realization (track, initial state) and input stream."""
    options = options or LoopOptions()
    trials = []
    for seed in seeds:
        for mode in modes:
            env = env_factory(seed)
            user = user_factory(seed)
            opts = LoopOptions(mode=mode, pacing=options.pacing,
                               workers=options.workers,
                               metrics_in_passthrough=options.metrics_in_passthrough)
            trial_id = f"{env.spec.env_id}-{mode}-s{seed}"
            trials.append(run_trial(env, model, sample_set, horizon, user,
                                    trial_id, seed, opts, sink=sink))
    return trials
