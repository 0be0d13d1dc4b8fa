"""Command-line entry point: collect | train | run | bench | serve.

Every command is driven by one YAML config (--config), with --set
key=value overrides.  Exit codes: 0 success, 2 validation error, 3
runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import koopman
from .bench import bench_ticks, format_report
from .bridge import BridgeServer
from .config import (
    RunConfig,
    apply_overrides,
    build_env,
    build_env_spec,
    build_basis_for,
    build_horizon,
    build_samples,
    build_user_factory,
    load_config,
)
from .envs import collect_dataset, load_dataset, make_env, make_excitation_policy, save_dataset
from .errors import ConfigError, ShareguardError
from .metrics import export, summarize, format_summary_table
from .session import LoopOptions, run_campaign, run_trial
from .sampling import grid


def _resolve(cfg: RunConfig, out_dir: str | None, name: str) -> Path:
    base = Path(out_dir) if out_dir else Path(".")
    base.mkdir(parents=True, exist_ok=True)
    return base / name


def cmd_collect(cfg: RunConfig, args) -> int:
    env = build_env(cfg, seed=cfg.model.collect_seed)
    policy = make_excitation_policy(env)
    ds = collect_dataset(env, policy, n_steps=cfg.model.collect_steps,
                         seed=cfg.model.collect_seed,
                         max_episode_steps=cfg.model.collect_episode_steps)
    ds.config_hash = cfg.config_hash()
    path = _resolve(cfg, args.out, cfg.model.dataset_path)
    save_dataset(ds, path)
    print(f"wrote {ds.n} triples to {path} (config {ds.config_hash})")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    dataset_path = Path(args.dataset) if args.dataset else _resolve(cfg, args.out, cfg.model.dataset_path)
    ds = load_dataset(dataset_path)
    env = build_env(cfg, seed=cfg.model.collect_seed)
    if ds.env_id != env.spec.env_id:
        raise ConfigError(f"dataset is for {ds.env_id!r}, config names {env.spec.env_id!r}")
    basis = build_basis_for(cfg, env)
    train_ds, heldout = ds.split(0.2)
    if heldout.n == 0:
        train_ds = heldout = ds
    model = koopman.fit(train_ds, basis, ridge=cfg.model.ridge)
    model = koopman.sparsify(model, train_ds, thresholds=cfg.model.sparsify_thresholds,
                             guard_factor=cfg.model.sparsify_guard)
    report = koopman.evaluate(model, heldout, horizons=(1, cfg.model.eval_horizon))
    path = _resolve(cfg, args.out, cfg.model.path)
    koopman.save_model(model, path, config_hash=cfg.config_hash())
    print(f"basis: {basis.size} functions, retained {model.basis.active_count} "
          f"({model.basis.active_count - model.basis.n_exempt} random)")
    print(f"{'dim':>4}{'1-step RMSE':>16}{f'{cfg.model.eval_horizon}-step RMSE':>18}")
    kstep = report.k_step_rmse.get(cfg.model.eval_horizon)
    for i, r in enumerate(report.one_step_rmse):
        ks = f"{kstep[i]:>18.3e}" if kstep is not None else f"{'-':>18}"
        print(f"{i:>4}{r:>16.3e}{ks}")
    print(f"wrote model to {path}")
    return 0


def cmd_run(cfg: RunConfig, args) -> int:
    spec = build_env_spec(cfg)
    samples = build_samples(cfg, spec)
    horizon = build_horizon(cfg, spec)
    model = koopman.load_model(Path(args.model) if args.model else _resolve(cfg, args.out, cfg.model.path))
    user_factory = build_user_factory(cfg, spec)
    seeds = [cfg.session.base_seed + i for i in range(cfg.session.n_trials)]
    options = LoopOptions(pacing="fast", workers=cfg.session.workers)
    trials = run_campaign(
        env_factory=lambda seed: make_env(spec, seed=seed),
        model=model, sample_set=samples, horizon=horizon,
        user_factory=user_factory, seeds=seeds, modes=tuple(cfg.session.modes),
        options=options,
    )
    summaries = summarize(trials)
    out_dir = Path(args.out) if args.out else Path(cfg.session.out_dir)
    paths = export(summaries, trials, out_dir, config_hash=cfg.config_hash(), seeds=seeds)
    print(format_summary_table(summaries))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    spec = build_env_spec(cfg)
    env = make_env(spec, seed=cfg.session.base_seed)
    horizon = build_horizon(cfg, spec)
    model = koopman.load_model(Path(args.model) if args.model else _resolve(cfg, args.out, cfg.model.path))
    counts_list = [cfg.sampling.per_dim_counts]
    for spec_str in args.counts or []:
        counts_list.append([int(v) for v in spec_str.split(",")])
    workers_list = [int(v) for v in args.workers.split(",")] if args.workers else [cfg.session.workers]
    results = []
    for counts in counts_list:
        samples = grid(spec.control_space, counts)
        for workers in workers_list:
            results.append(bench_ticks(env, model, samples, horizon,
                                       duration=args.duration, workers=workers))
    report = format_report(results, config_hash=cfg.config_hash())
    print(report, end="")
    path = _resolve(cfg, args.out, "bench_report.txt")
    path.write_text(report)
    print(f"wrote {path}")
    return 0


def cmd_serve(cfg: RunConfig, args) -> int:
    spec = build_env_spec(cfg)
    env = make_env(spec, seed=cfg.session.base_seed)
    samples = build_samples(cfg, spec)
    horizon = build_horizon(cfg, spec)
    model = koopman.load_model(Path(args.model) if args.model else _resolve(cfg, args.out, cfg.model.path))
    snapshot = {
        "config_hash": cfg.config_hash(),
        "env_id": spec.env_id,
        "dt": spec.dt,
        "max_trial_time": spec.max_trial_time,
        "inflation_radius": spec.inflation_radius,
        "control_intervals": [list(iv) for iv in spec.control_space.intervals],
        "per_dim_counts": list(cfg.sampling.per_dim_counts),
        "t_steps": horizon.t_steps,
        "physics": dict(spec.physics_params),
    }
    if spec.env_id == "race_car":
        snapshot["track"] = {
            "centerline": [[float(x), float(y)] for x, y in env.track.centerline],
            "half_width": env.track.half_width,
        }
    bridge = BridgeServer(
        spec.control_space, snapshot,
        host=cfg.bridge.host, port=cfg.bridge.port,
        queue_size=cfg.bridge.queue_size,
        cloud_tick_stride=cfg.bridge.cloud_tick_stride,
        cloud_sample_stride=cfg.bridge.cloud_sample_stride,
        cloud_step_stride=cfg.bridge.cloud_step_stride,
    ).start()
    print(f"bridge listening on ws://{cfg.bridge.host}:{cfg.bridge.port} "
          f"(env {spec.env_id}, N={samples.n}, T={horizon.t_steps})")
    options = LoopOptions(mode=cfg.session.modes[-1], pacing=cfg.session.pacing,
                          workers=cfg.session.workers)
    rng = np.random.default_rng(np.uint64(cfg.session.base_seed))
    try:
        trial = 0
        while args.trials is None or trial < args.trials:
            trial_id = f"live-{trial}"
            record = run_trial(env, model, samples, horizon, bridge.input_source,
                               trial_id, int(rng.integers(2**32)), options,
                               sink=bridge, mode_provider=bridge.mode_provider)
            print(f"{trial_id}: {record.outcome} after {record.duration:.2f}s "
                  f"({len(record.ticks)} ticks, {record.overrun_ticks} overruns)")
            if record.outcome == "aborted":
                break
            trial += 1
    except KeyboardInterrupt:
        print("interrupted")
    finally:
        bridge.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shareguard",
        description="Sampled receding-horizon safety filtering for shared control")
    parser.add_argument("--config", required=True, help="path to the YAML run config")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value (dotted path)")
    parser.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", help="collect an excitation dataset")
    p_train = sub.add_parser("train", help="fit and sparsify the lifted model")
    p_train.add_argument("--dataset", default=None)
    p_run = sub.add_parser("run", help="headless scripted-user campaign")
    p_run.add_argument("--model", default=None)
    p_bench = sub.add_parser("bench", help="measure loop throughput")
    p_bench.add_argument("--model", default=None)
    p_bench.add_argument("--duration", type=float, default=10.0)
    p_bench.add_argument("--workers", default=None, help="comma list of worker counts")
    p_bench.add_argument("--counts", action="append", default=None,
                         help="extra per-dim counts, comma-separated; repeatable")
    p_serve = sub.add_parser("serve", help="serve the live cockpit bridge")
    p_serve.add_argument("--model", default=None)
    p_serve.add_argument("--trials", type=int, default=None,
                         help="stop after this many trials (default: run forever)")
    return parser


_COMMANDS = {
    "collect": cmd_collect,
    "train": cmd_train,
    "run": cmd_run,
    "bench": cmd_bench,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ShareguardError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
