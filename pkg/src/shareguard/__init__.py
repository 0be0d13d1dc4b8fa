"""shareguard: minimal-intervention shared control via sampled
receding-horizon safety filtering over a learned Koopman model."""

from .errors import ConfigError, DomainError, IllConditionedError, ShareguardError
from .rollout import HorizonConfig, RolloutBatch, percent_safe, rollout_batch, rollout_one
from .safety_filter import (
    GroundTruthModel,
    SharedControlDecision,
    dense_oracle,
    deviation_cost,
    filter_step,
)
from .sampling import ControlSpace, SampleSet, deviation_bound, grid, grid_half_spacing, nearest_sample

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ControlSpace",
    "DomainError",
    "GroundTruthModel",
    "HorizonConfig",
    "IllConditionedError",
    "RolloutBatch",
    "SampleSet",
    "ShareguardError",
    "SharedControlDecision",
    "dense_oracle",
    "deviation_bound",
    "deviation_cost",
    "filter_step",
    "grid",
    "grid_half_spacing",
    "nearest_sample",
    "percent_safe",
    "rollout_batch",
    "rollout_one",
]
