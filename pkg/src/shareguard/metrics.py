"""Trial records, campaign statistics, and their on-disk formats.

Two tick-level quantities proxy the operator: the deviation between their
input and the closest fully-safe sampled control (skill: low when the
operator's commands are themselves safe), and the fraction of sampled
rollouts that stay safe (style: low when the system is driven near the
boundary).  Trial-level aggregation mirrors the standard success-rate /
time-to-failure pair; survived trials count at the time cap in the mean
time to failure (configurable, documented convention).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .rollout import RolloutBatch

USER_ONLY = "user_only"
MPMI = "mpmi"

OUTCOME_SURVIVED = "survived"
OUTCOME_FAILED = "failed"


@dataclass
class TickRecord:
    t: float
    state: np.ndarray
    u_h: np.ndarray
    u_r: np.ndarray
    deviation_to_closest_safe: float
    percent_safe: float
    fallback_used: bool
    compute_time: float = 0.0


@dataclass
class TrialRecord:
    trial_id: str
    env_id: str
    mode: str
    seed: int
    outcome: str
    duration: float
    max_trial_time: float
    ticks: list[TickRecord] = field(default_factory=list, repr=False)
    overrun_ticks: int = 0


@dataclass
class MetricSummary:
    env_id: str
    mode: str
    n_trials: int
    success_rate: float
    mean_time_to_failure: float
    mean_deviation: float
    std_deviation: float
    mean_percent_safe: float
    std_percent_safe: float


def deviation_to_closest_safe(batch: RolloutBatch, u_h) -> float:
    """Distance from the operator's input to the nearest fully-safe sample;
    when none is safe, the nearest among the longest-surviving samples
    (the fallback-eligible set)."""
    u_h = np.asarray(u_h, dtype=float)
    safe = np.flatnonzero(batch.fully_safe)
    if safe.size == 0:
        safe = np.flatnonzero(batch.safe_steps == batch.safe_steps.max())
    dists = np.linalg.norm(batch.sample_set.samples[safe] - u_h, axis=1)
    return float(dists.min())


def _summarize_group(trials: list[TrialRecord]) -> MetricSummary:
    if not trials:
        raise ConfigError("cannot summarize an empty trial group")
    envs = {t.env_id for t in trials}
    if len(envs) > 1:
        raise ConfigError(f"mixed environments in one summary group: {sorted(envs)}")
    modes = {t.mode for t in trials}
    if len(modes) > 1:
        raise ConfigError(f"mixed modes in one summary group: {sorted(modes)}")
    success = np.array([t.outcome == OUTCOME_SURVIVED for t in trials], dtype=float)
    durations = np.array([t.duration for t in trials])
    dev_means = np.array([
        np.mean([k.deviation_to_closest_safe for k in t.ticks]) for t in trials
    ])
    safe_means = np.array([
        np.mean([k.percent_safe for k in t.ticks]) for t in trials
    ])
    return MetricSummary(
        env_id=trials[0].env_id,
        mode=trials[0].mode,
        n_trials=len(trials),
        success_rate=float(success.mean()),
        mean_time_to_failure=float(durations.mean()),
        mean_deviation=float(dev_means.mean()),
        std_deviation=float(dev_means.std()),
        mean_percent_safe=float(safe_means.mean()),
        std_percent_safe=float(safe_means.std()),
    )


def summarize(trials: list[TrialRecord]) -> dict[tuple[str, str], MetricSummary]:
    """Aggregate per (env_id, mode); permutation-invariant over trials."""
    if not trials:
        raise ConfigError("cannot summarize an empty trial list")
    groups: dict[tuple[str, str], list[TrialRecord]] = {}
    for t in trials:
        groups.setdefault((t.env_id, t.mode), []).append(t)
    return {key: _summarize_group(group) for key, group in sorted(groups.items())}


def format_summary_table(summaries: dict[tuple[str, str], MetricSummary]) -> str:
    """Aligned text table: metric x control condition rows, one column per
    environment, plus success-rate and time-to-failure rows."""
    envs = sorted({k[0] for k in summaries})
    modes = sorted({k[1] for k in summaries})
    header = f"{'Metric':<22}{'Control':<12}" + "".join(f"{e:>18}" for e in envs)
    lines = [header, "-" * len(header)]

    def cell(env, mode, fn):
        s = summaries.get((env, mode))
        return f"{fn(s):>18}" if s is not None else f"{'-':>18}"

    rows = [
        ("Avg. Deviation", lambda s: f"{s.mean_deviation:.3f} +- {s.std_deviation:.3f}"),
        ("Avg. % Safe Rollouts", lambda s: f"{s.mean_percent_safe:.3f} +- {s.std_percent_safe:.3f}"),
        ("Success Rate", lambda s: f"{s.success_rate:.3f}"),
        ("Time to Failure [s]", lambda s: f"{s.mean_time_to_failure:.3f}"),
    ]
    for name, fn in rows:
        for mode in modes:
            lines.append(f"{name:<22}{mode:<12}" + "".join(cell(e, mode, fn) for e in envs))
    return "\n".join(lines) + "\n"


_TICK_FIELDS = "trial_id tick t state u_h u_r deviation_to_closest_safe percent_safe fallback_used compute_time"


def export(summaries: dict[tuple[str, str], MetricSummary], trials: list[TrialRecord],
           out_dir, config_hash: str = "", seeds: list[int] | None = None) -> dict[str, Path]:
    """Write the trial/tick logs plus aligned and machine-readable summaries.

    Every file embeds the config hash and seeds so a run can be reproduced
    exactly.  Returns the paths written.
    """
    if not trials:
        raise ConfigError("refusing to export an empty trial list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = sorted({t.seed for t in trials}) if seeds is None else seeds

    trials_path = out_dir / "trials.txt"
    with trials_path.open("w") as f:
        f.write(json.dumps({"config_hash": config_hash, "seeds": seeds}, sort_keys=True) + "\n")
        f.write("# fields: trial_id env_id mode seed outcome duration max_trial_time n_ticks overrun_ticks\n")
        for t in trials:
            f.write(f"{t.trial_id} {t.env_id} {t.mode} {t.seed} {t.outcome} "
                    f"{t.duration:.17g} {t.max_trial_time:.17g} {len(t.ticks)} {t.overrun_ticks}\n")

    ticks_path = out_dir / "ticks.txt"
    with ticks_path.open("w") as f:
        f.write(json.dumps({"config_hash": config_hash, "seeds": seeds}, sort_keys=True) + "\n")
        f.write(f"# fields: {_TICK_FIELDS}\n")
        for t in trials:
            for i, k in enumerate(t.ticks):
                state = " ".join(f"{v:.17g}" for v in k.state)
                u_h = " ".join(f"{v:.17g}" for v in k.u_h)
                u_r = " ".join(f"{v:.17g}" for v in k.u_r)
                f.write(f"{t.trial_id} {i} {k.t:.17g} {state} {u_h} {u_r} "
                        f"{k.deviation_to_closest_safe:.17g} {k.percent_safe:.17g} "
                        f"{int(k.fallback_used)} {k.compute_time:.17g}\n")

    summary_json = out_dir / "summary.json"
    payload = {
        "config_hash": config_hash,
        "seeds": seeds,
        "groups": [asdict(s) for s in summaries.values()],
    }
    summary_json.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    summary_txt = out_dir / "summary.txt"
    summary_txt.write_text(
        f"config_hash: {config_hash}\nseeds: {seeds}\n\n" + format_summary_table(summaries))

    return {"trials": trials_path, "ticks": ticks_path,
            "summary_json": summary_json, "summary_txt": summary_txt}


def import_summary(path) -> dict[tuple[str, str], MetricSummary]:
    """Inverse of the summary.json side of export."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DomainError(f"{path}: malformed summary file: {e}") from e
    out = {}
    for g in payload["groups"]:
        s = MetricSummary(**g)
        out[(s.env_id, s.mode)] = s
    return out
