"""Declarative run configuration: one YAML file drives every command.

Validation is strict: unknown keys anywhere are rejected so typos cannot
silently fall back to defaults.  A short hash of the resolved config is
embedded in every artifact a command writes, alongside the seeds, so any
output can be reproduced bit-for-bit (timing fields excluded).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .envs import EnvSpec, balance_bot_spec, make_env, race_car_spec
from .koopman import build_basis
from .rollout import HorizonConfig
from .sampling import SampleSet, grid
from .scripted import make_scripted_user


@dataclass
class EnvSection:
    env_id: str = "balance_bot"
    dt: float | None = None
    inflation_radius: float | None = None
    max_trial_time: float | None = None
    physics: dict = field(default_factory=dict)


@dataclass
class SamplingSection:
    per_dim_counts: list[int] = field(default_factory=lambda: [1024])


@dataclass
class HorizonSection:
    t_steps: int = 30
    noise_sigma: list[float] | float = 0.0
    noise_seed: int = 0


@dataclass
class ModelSection:
    basis_seed: int = 7
    n_random: int = 50
    ridge: float = 1e-6
    sparsify_thresholds: list[float] = field(default_factory=lambda: [1e-4, 1e-3, 1e-2])
    sparsify_guard: float = 1.05
    path: str = "model.txt"
    collect_steps: int = 50000
    collect_seed: int = 1
    collect_episode_steps: int = 400
    dataset_path: str = "dataset.txt"
    eval_horizon: int = 30


@dataclass
class SessionSection:
    modes: list[str] = field(default_factory=lambda: ["user_only", "mpmi"])
    n_trials: int = 20
    base_seed: int = 100
    user: str = "adversarial"
    user_params: dict = field(default_factory=dict)
    out_dir: str = "out"
    pacing: str = "fast"
    workers: int = 1
    initial_perturbation: float = 1.0


@dataclass
class BridgeSection:
    host: str = "127.0.0.1"
    port: int = 8765
    cloud_tick_stride: int = 5
    cloud_sample_stride: int = 8
    cloud_step_stride: int = 3
    queue_size: int = 64
    serve_static: bool = False
    static_dir: str = "frontend/dist"


@dataclass
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    horizon: HorizonSection = field(default_factory=HorizonSection)
    model: ModelSection = field(default_factory=ModelSection)
    session: SessionSection = field(default_factory=SessionSection)
    bridge: BridgeSection = field(default_factory=BridgeSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _build_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path!r} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys in {path!r}: {sorted(unknown)}")
    return cls(**data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in (("env", EnvSection), ("sampling", SamplingSection),
                      ("horizon", HorizonSection), ("model", ModelSection),
                      ("session", SessionSection), ("bridge", BridgeSection)):
        if name in raw:
            kwargs[name] = _build_section(cls, raw[name], name)
    return RunConfig(**kwargs)


def _parse_scalar(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply key=value overrides with dotted paths, e.g. session.n_trials=5."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"override {item!r}: no such config path {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {item!r}: no such config key {key!r}")
        node[parts[-1]] = _parse_scalar(value)
    return config_from_dict(data)


def build_env_spec(cfg: RunConfig) -> EnvSpec:
    sec = cfg.env
    maker = {"balance_bot": balance_bot_spec, "race_car": race_car_spec}.get(sec.env_id)
    if maker is None:
        raise ConfigError(f"unknown env_id {sec.env_id!r}")
    kwargs = dict(sec.physics)
    if sec.dt is not None:
        kwargs["dt"] = sec.dt
    if sec.inflation_radius is not None:
        kwargs["inflation_radius"] = sec.inflation_radius
    if sec.max_trial_time is not None:
        kwargs["max_trial_time"] = sec.max_trial_time
    return maker(**kwargs)


def build_env(cfg: RunConfig, seed: int = 0):
    return make_env(build_env_spec(cfg), seed=seed)


def build_samples(cfg: RunConfig, spec: EnvSpec) -> SampleSet:
    return grid(spec.control_space, cfg.sampling.per_dim_counts)


def build_horizon(cfg: RunConfig, spec: EnvSpec) -> HorizonConfig:
    sig = cfg.horizon.noise_sigma
    return HorizonConfig(
        t_steps=cfg.horizon.t_steps,
        dt=spec.dt,
        noise_sigma=tuple(sig) if isinstance(sig, list) else float(sig),
        noise_seed=cfg.horizon.noise_seed,
    )


def build_basis_for(cfg: RunConfig, env) -> "BasisDictionary":
    return build_basis(
        env_id=env.spec.env_id,
        state_dim=env.state_dim,
        control_dim=env.control_dim,
        n_random=cfg.model.n_random,
        seed=cfg.model.basis_seed,
    )


def build_user_factory(cfg: RunConfig, spec: EnvSpec):
    def factory(seed: int):
        return make_scripted_user(cfg.session.user, spec.control_space,
                                  seed=seed, **cfg.session.user_params)
    return factory
