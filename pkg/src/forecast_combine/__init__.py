"""Context-aware combination of worker inferences via performance forecasting."""

from .core import (
    CombineError,
    EpochPanel,
    EvalError,
    FeatureError,
    ForecastCombineError,
    LearnError,
    MarketSeries,
    Structure,
    TargetKind,
    TopicConfig,
    ValidationError,
    WorkerId,
    WorkerKind,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "CombineError",
    "EpochPanel",
    "EvalError",
    "FeatureError",
    "ForecastCombineError",
    "LearnError",
    "MarketSeries",
    "Structure",
    "TargetKind",
    "TopicConfig",
    "ValidationError",
    "WorkerId",
    "WorkerKind",
    "validate_config",
]
