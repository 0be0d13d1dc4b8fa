from .core import (
    BALANCE_BOT,
    RACE_CAR,
    BalanceBotEnv,
    EnvSpec,
    RaceCarEnv,
    balance_bot_spec,
    is_failed,
    is_safe,
    make_env,
    race_car_spec,
)
from .dataset import (
    Dataset,
    DrivingExcitationPolicy,
    OrnsteinUhlenbeckPolicy,
    collect_dataset,
    load_dataset,
    make_excitation_policy,
    save_dataset,
)
from .track import Track, TrackParams, generate_track

__all__ = [
    "BALANCE_BOT",
    "RACE_CAR",
    "BalanceBotEnv",
    "Dataset",
    "DrivingExcitationPolicy",
    "EnvSpec",
    "OrnsteinUhlenbeckPolicy",
    "RaceCarEnv",
    "Track",
    "TrackParams",
    "balance_bot_spec",
    "collect_dataset",
    "generate_track",
    "is_failed",
    "is_safe",
    "load_dataset",
    "make_excitation_policy",
    "make_env",
    "race_car_spec",
    "save_dataset",
]
