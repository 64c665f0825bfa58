"""Performance forecaster: global or per-inferer models with a global fallback."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..combiner import zscores
from ..core import (
    EpochPanel,
    LearnError,
    Structure,
    TargetKind,
    TopicConfig,
    derive_seed,
)
from ..features import WORKER_COLUMN, FeatureMatrix, prune_features
from .gbt import GbtHyperparams, GbtModel, fit_gbt, predict
from .tuning import tune

FORMAT_VERSION = 1


def build_targets(panel: EpochPanel, target_kind, epsilon: float = 1e-8) -> np.ndarray:
    """(epochs, workers) matrix of forecasting targets; NaN where a worker is absent."""
    kind = TargetKind(target_kind)
    if kind is TargetKind.LOSS:
        return np.array(panel.log_loss)
    if kind is TargetKind.REGRET:
        return np.array(panel.regret)
    return np.vstack([zscores(row, epsilon) for row in panel.regret])


def train_window(n_epochs: int, cfg: TopicConfig) -> tuple[int, int]:
    """Epoch-index range [start, stop) used for training; the test window follows."""
    stop = n_epochs - cfg.n_test
    start = stop - cfg.n_train
    if start < 0:
        raise LearnError(
            f"panel has {n_epochs} epochs; need n_train + n_test = {cfg.n_train + cfg.n_test}"
        )
    return start, stop


@dataclass
class ModelBundle:
    model: GbtModel
    columns: tuple[str, ...]

    def predict(self, fm: FeatureMatrix) -> np.ndarray:
        return predict(self.model, fm.select(self.columns).values, self.columns)


@dataclass
class Forecaster:
    structure: Structure
    target_kind: TargetKind
    global_model: ModelBundle
    per_worker_models: dict[int, ModelBundle] = field(default_factory=dict)
    worker_ids: tuple[str, ...] = ()
    window: tuple[int, int] = (0, 0)
    seed: int = 0

    def model_for(self, worker: int) -> ModelBundle:
        return self.per_worker_models.get(int(worker), self.global_model)

    def as_global(self) -> "Forecaster":
        """The same forecaster restricted to its global model."""
        return Forecaster(Structure.GLOBAL, self.target_kind, self.global_model, {},
                          self.worker_ids, self.window, self.seed)


def _fit(fm: FeatureMatrix, y: np.ndarray, cfg: TopicConfig, seed: int,
         hp: Optional[GbtHyperparams], keep=()) -> ModelBundle:
    pruned = prune_features(fm, y, keep=keep)
    if not pruned.names:
        pruned = fm.select(fm.names[:1])
    X = pruned.values
    if hp is None and cfg.tune_budget > 0 and len(X) >= 2 * cfg.min_train_rows:
        hp = tune(X, y, cfg.tune_budget, derive_seed(seed, "tune"), cfg.min_train_rows)
    model = fit_gbt(X, y, hp or GbtHyperparams(), seed, pruned.names)
    return ModelBundle(model, pruned.names)


def train_forecaster(panel: EpochPanel, features: FeatureMatrix, cfg: TopicConfig,
                     hp: Optional[GbtHyperparams] = None,
                     seed: Optional[int] = None) -> Forecaster:
    """Train on the ``n_train`` epochs preceding the final ``n_test`` epochs."""
    seed = cfg.seed if seed is None else seed
    start, stop = train_window(panel.n_epochs, cfg)
    lo, hi = panel.epochs[start], panel.epochs[stop - 1]
    targets = build_targets(panel, cfg.target_kind, cfg.epsilon)
    pos = np.searchsorted(panel.epochs, features.epochs)
    y_all = targets[pos, features.workers]
    rows = (features.epochs >= lo) & (features.epochs <= hi) & np.isfinite(y_all)
    if rows.sum() < cfg.min_train_rows:
        raise LearnError(f"only {int(rows.sum())} training rows for the global model")
    train = features.rows(rows)
    y = y_all[rows]
    glob = _fit(train, y, cfg, derive_seed(seed, "global"), hp, keep=(WORKER_COLUMN,))
    per_worker = {}
    if cfg.structure is Structure.PER_INFERER:
        own = train.drop([WORKER_COLUMN])
        for j, wid in enumerate(panel.worker_ids):
            mine = train.workers == j
            if mine.sum() < cfg.min_train_rows:
                continue
            per_worker[j] = _fit(own.rows(mine), y[mine], cfg, derive_seed(seed, wid), hp)
    return Forecaster(cfg.structure, cfg.target_kind, glob, per_worker,
                      panel.worker_ids, (int(lo), int(hi)), seed)


def forecast_rows(f: Forecaster, features: FeatureMatrix) -> np.ndarray:
    """One prediction per feature row, from the worker's own model or the fallback."""
    out = np.full(features.n_rows, np.nan)
    for w in np.unique(features.workers):
        mask = features.workers == w
        out[mask] = f.model_for(w).predict(features.rows(mask))
    return out


def forecast_epoch(f: Forecaster, features: FeatureMatrix, epoch: int) -> dict[str, float]:
    """Predicted targets at ``epoch`` for every worker with a feature row there."""
    fm = features.rows(features.epochs == epoch)
    pred = forecast_rows(f, fm)
    return {f.worker_ids[int(w)]: float(p) for w, p in zip(fm.workers, pred)}


def _model_arrays(prefix: str, b: ModelBundle) -> dict:
    m = b.model
    return {f"{prefix}/{k}": getattr(m, k) for k in ("feat", "thr", "left", "right", "value",
                                                      "medians")}


def save_forecaster(f: Forecaster, path) -> None:
    """Write a versioned zip: ``meta.json`` plus one ``.npy`` per model array."""
    models = {"global": f.global_model}
    models.update({f"worker{j}": b for j, b in f.per_worker_models.items()})
    meta = {
        "format": "forecast-combine/forecaster",
        "version": FORMAT_VERSION,
        "structure": f.structure.value,
        "target_kind": f.target_kind.value,
        "worker_ids": list(f.worker_ids),
        "window": list(f.window),
        "seed": f.seed,
        "models": {
            k: {"columns": list(b.columns), "base": b.model.base, "seed": b.model.seed,
                "hyperparams": b.model.hyperparams.to_dict()}
            for k, b in models.items()
        },
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("meta.json", json.dumps(meta, indent=1, sort_keys=True))
        for k, b in models.items():
            for name, arr in _model_arrays(k, b).items():
                buf = io.BytesIO()
                np.save(buf, arr, allow_pickle=False)
                zf.writestr(name + ".npy", buf.getvalue())


def load_forecaster(path) -> Forecaster:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "forecast-combine/forecaster":
            raise LearnError("not a forecaster artifact")
        if meta["version"] != FORMAT_VERSION:
            raise LearnError(f"unsupported forecaster format version {meta['version']}")

        def load(key):
            info = meta["models"][key]
            arr = {n: np.load(io.BytesIO(zf.read(f"{key}/{n}.npy")), allow_pickle=False)
                   for n in ("feat", "thr", "left", "right", "value", "medians")}
            model = GbtModel(info["base"], arr["feat"], arr["thr"], arr["left"], arr["right"],
                             arr["value"], arr["medians"], tuple(info["columns"]),
                             GbtHyperparams(**info["hyperparams"]), info["seed"])
            return ModelBundle(model, tuple(info["columns"]))

        per_worker = {int(k[6:]): load(k) for k in meta["models"] if k.startswith("worker")}
        return Forecaster(Structure(meta["structure"]), TargetKind(meta["target_kind"]),
                          load("global"), per_worker, tuple(meta["worker_ids"]),
                          tuple(meta["window"]), meta["seed"])
