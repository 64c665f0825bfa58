from .forecaster import (
    Forecaster,
    ModelBundle,
    build_targets,
    forecast_epoch,
    forecast_rows,
    load_forecaster,
    save_forecaster,
    train_forecaster,
    train_window,
)
from .gbt import GbtHyperparams, GbtModel, fit_gbt, predict, r2_score
from .tuning import SEARCH_SPACE, tune

__all__ = [
    "Forecaster",
    "GbtHyperparams",
    "GbtModel",
    "ModelBundle",
    "SEARCH_SPACE",
    "build_targets",
    "fit_gbt",
    "forecast_epoch",
    "forecast_rows",
    "load_forecaster",
    "predict",
    "r2_score",
    "save_forecaster",
    "train_forecaster",
    "train_window",
    "tune",
]
