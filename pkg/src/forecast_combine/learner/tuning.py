"""Randomized hyperparameter search with a time-ordered holdout."""

from __future__ import annotations

import math

import numpy as np

from ..core import LearnError
from .gbt import GbtHyperparams, fit_gbt, predict

# Search space; learning rate is sampled log-uniformly.
SEARCH_SPACE = {
    "n_trees": (50, 500),
    "max_depth": (2, 8),
    "learning_rate": (0.01, 0.3),
    "min_samples_leaf": (2, 20),
    "row_subsample": (0.5, 1.0),
    "feature_subsample": (0.5, 1.0),
}
HOLDOUT_FRACTION = 0.2


def sample_hyperparams(rng: np.random.Generator) -> GbtHyperparams:
    s = SEARCH_SPACE
    lr_lo, lr_hi = s["learning_rate"]
    return GbtHyperparams(
        n_trees=int(rng.integers(s["n_trees"][0], s["n_trees"][1] + 1)),
        max_depth=int(rng.integers(s["max_depth"][0], s["max_depth"][1] + 1)),
        learning_rate=float(math.exp(rng.uniform(math.log(lr_lo), math.log(lr_hi)))),
        min_samples_leaf=int(rng.integers(s["min_samples_leaf"][0], s["min_samples_leaf"][1] + 1)),
        row_subsample=float(rng.uniform(*s["row_subsample"])),
        feature_subsample=float(rng.uniform(*s["feature_subsample"])),
    )


def holdout_split(n: int) -> int:
    """Index where the held-out tail (last 20% of rows) begins."""
    return n - max(1, int(round(HOLDOUT_FRACTION * n)))


def tune(X, y, budget: int = 30, seed: int = 0, min_train_rows: int = 50) -> GbtHyperparams:
    """Best of ``budget`` random configurations by held-out squared error.

    Rows must be in time order; the last 20% are held out, never shuffled.
    """
    if budget < 1:
        raise LearnError("tuning budget must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) < 2 * min_train_rows:
        raise LearnError(f"tuning needs >= {2 * min_train_rows} rows, got {len(X)}")
    cut = holdout_split(len(X))
    rng = np.random.default_rng(seed)
    best, best_err = None, math.inf
    for _ in range(budget):
        hp = sample_hyperparams(rng)
        fit_seed = int(rng.integers(0, 2**62))
        model = fit_gbt(X[:cut], y[:cut], hp, fit_seed)
        err = float(np.mean((predict(model, X[cut:]) - y[cut:]) ** 2))
        if err < best_err:
            best, best_err = hp, err
    return best
