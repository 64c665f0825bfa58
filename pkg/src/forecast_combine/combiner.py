"""Loss, regret and weighting math for combining worker inferences.

Every vector here is indexed by worker; NaN marks a worker that is absent at
the epoch and is left out of cross-sectional statistics and weighted sums.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import CombineError, TargetKind, TopicConfig, ValidationError

LOSS_FLOOR = 1e-12


class Provenance(str, enum.Enum):
    FROM_FORECAST = "FROM_FORECAST"
    FROM_EMA = "FROM_EMA"


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        present = w[np.isfinite(w)]
        if present.size and (np.any(present <= 0) or present.sum() <= 0):
            raise CombineError("weights must be positive")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)


def epoch_loss(inference, truth):
    """Squared error of an inference against the truth."""
    return (np.asarray(inference, dtype=float) - truth) ** 2


def to_log_loss(loss, log_base: float = 10.0, floor: float = LOSS_FLOOR,
                diagnostics: Optional[dict] = None):
    """Logarithm of ``loss``; zero (or sub-floor) losses are clamped to ``floor``.

    When ``diagnostics`` is given its ``"floored"`` entry counts the clamps.
    """
    loss = np.asarray(loss, dtype=float)
    low = loss < floor
    if diagnostics is not None:
        diagnostics["floored"] = diagnostics.get("floored", 0) + int(np.count_nonzero(low))
    clamped = np.where(low, floor, loss)
    if log_base == 10.0:
        out = np.log10(clamped)
    else:
        out = np.log(clamped) / math.log(log_base)
    return out if out.ndim else float(out)


def regret_from_forecast_loss(prev_network_log_loss, forecast_log_loss):
    """Approximate regret from a forecasted log loss.

    Uses the previous epoch's network log loss since the current one is
    unknown when forecasts are made.
    """
    return prev_network_log_loss - np.asarray(forecast_log_loss, dtype=float)


def _pop_std(x: np.ndarray) -> float:
    present = x[np.isfinite(x)]
    if present.size == 0:
        return 0.0
    return float(np.std(present))


def normalize_regrets(regrets, epsilon: float = 1e-8) -> np.ndarray:
    """Scale regrets by their cross-worker population std (no centering)."""
    r = np.asarray(regrets, dtype=float)
    return r / (_pop_std(r) + epsilon)


def zscores(regrets, epsilon: float = 1e-8) -> np.ndarray:
    """Regret z-scores across the present workers at one epoch."""
    r = np.asarray(regrets, dtype=float)
    present = r[np.isfinite(r)]
    if present.size == 0:
        return r.copy()
    return (r - present.mean()) / (present.std() + epsilon)


def weight_fn(x, p: float = 3.0, c: float = 0.75):
    """Sigmoid weight gate ``p / (exp(-p (x - c)) + 1)``; range (0, p)."""
    with np.errstate(over="ignore"):
        out = p / (np.exp(-p * (np.asarray(x, dtype=float) - c)) + 1.0)
    return out if out.ndim else float(out)


def weights_from_forecast(target_kind, forecasts, prev_network_log_loss: float,
                          cfg: TopicConfig) -> WeightVector:
    """Turn one epoch of forecasted targets into combination weights."""
    try:
        kind = TargetKind(target_kind)
    except ValueError:
        raise ValidationError(f"unknown target_kind: {target_kind!r}") from None
    f = np.asarray(forecasts, dtype=float)
    if kind is TargetKind.ZSCORE:
        x = f + cfg.delta_z
    elif kind is TargetKind.REGRET:
        x = normalize_regrets(f, cfg.epsilon)
    else:
        regrets = regret_from_forecast_loss(prev_network_log_loss, f)
        x = normalize_regrets(regrets, cfg.epsilon)
    return WeightVector(weight_fn(x, cfg.p, cfg.c), Provenance.FROM_FORECAST)


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    ok = np.isfinite(values) & np.isfinite(weights)
    if not ok.any():
        raise CombineError("no contributing workers")
    w = weights[ok]
    return float(np.sum(w * values[ok]) / np.sum(w))


def forecast_implied_inference(inferences, weights) -> float:
    """Weighted mean of raw inferences under forecast-derived weights."""
    v = np.asarray(inferences, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != w.shape:
        raise CombineError("inferences and weights differ in length")
    return _weighted_mean(v, w)


def update_ema_regret(prev_ema, regret, alpha: float):
    """EMA of regrets; missing history starts at the first observed regret.

    A missing regret (absent worker) carries the previous EMA forward.
    """
    prev = np.asarray(prev_ema, dtype=float)
    r = np.asarray(regret, dtype=float)
    out = np.where(np.isnan(prev), r, alpha * r + (1.0 - alpha) * prev)
    out = np.where(np.isnan(r), prev, out)
    return out if out.ndim else float(out)


def network_inference(raw_inferences, implied_inferences, ema_regrets,
                      cfg: TopicConfig) -> float:
    """Combine raw and forecast-implied inferences by gated EMA regrets.

    ``ema_regrets`` lists raw contributors first, then implied ones.  Entries
    with a missing inference or missing EMA regret do not contribute.
    """
    values = np.concatenate([np.asarray(raw_inferences, dtype=float).ravel(),
                             np.asarray(implied_inferences, dtype=float).ravel()])
    ema = np.asarray(ema_regrets, dtype=float).ravel()
    if ema.shape != values.shape:
        raise CombineError("ema_regrets must cover every contributor")
    ok = np.isfinite(values) & np.isfinite(ema)
    if not ok.any():
        raise CombineError("empty contributor set")
    x = np.where(ok, ema, np.nan)
    if cfg.normalize_ema_regrets:
        x = normalize_regrets(x, cfg.epsilon)
    w = weight_fn(x, cfg.p, cfg.c)
    return _weighted_mean(values, w)


def naive_network_inference(raw_inferences, ema_regrets, cfg: TopicConfig) -> float:
    """Network inference from the raw inferences alone."""
    return network_inference(raw_inferences, np.empty(0), ema_regrets, cfg)


def roll_forward(truth: np.ndarray, inference: np.ndarray, cfg: TopicConfig,
                 diagnostics: Optional[dict] = None) -> dict:
    """Score a panel epoch by epoch with the naive combination as the network.

    Returns a dict of arrays: loss, log_loss, regret, naive_inference,
    network_loss, network_log_loss, ema_regret.  The EMA for epoch ``i`` is
    the one available after scoring epoch ``i``.
    """
    truth = np.asarray(truth, dtype=float)
    inference = np.asarray(inference, dtype=float)
    n, w = inference.shape
    loss = epoch_loss(inference, truth[:, None])
    log_loss = to_log_loss(loss, cfg.log_base, cfg.loss_floor, diagnostics)
    log_loss = np.where(np.isnan(loss), np.nan, log_loss)

    naive = np.full(n, np.nan)
    ema_hist = np.full((n, w), np.nan)
    ema = np.full(w, np.nan)
    for i in range(n):
        present = np.isfinite(inference[i])
        if not present.any():
            raise CombineError(f"no inferences at epoch index {i}")
        naive[i] = naive_network_inference(inference[i], _cold_start(ema, present), cfg)
        net_ll = to_log_loss(epoch_loss(naive[i], truth[i]), cfg.log_base, cfg.loss_floor,
                             diagnostics)
        ema = update_ema_regret(ema, net_ll - log_loss[i], cfg.alpha)
        ema_hist[i] = ema

    network_loss = epoch_loss(naive, truth)
    network_log_loss = to_log_loss(network_loss, cfg.log_base, cfg.loss_floor)
    return {
        "loss": loss,
        "log_loss": log_loss,
        "regret": network_log_loss[:, None] - log_loss,
        "naive_inference": naive,
        "network_loss": network_loss,
        "network_log_loss": network_log_loss,
        "ema_regret": ema_hist,
    }


def _cold_start(ema: np.ndarray, present: np.ndarray) -> np.ndarray:
    # present workers without regret history enter at the mean known EMA (0 if none)
    known = ema[present & np.isfinite(ema)]
    fill = known.mean() if known.size else 0.0
    out = np.where(present & np.isnan(ema), fill, ema)
    return np.where(present, out, np.nan)


def implied_series(inference_rows: np.ndarray, weight_rows: np.ndarray) -> np.ndarray:
    """Forecast-implied inference for each row of a (epochs, workers) window."""
    return np.array([forecast_implied_inference(v, w)
                     for v, w in zip(inference_rows, weight_rows)])


def network_series(inference_rows: np.ndarray, implied: Sequence[float], truth: np.ndarray,
                   raw_ema_rows: np.ndarray, network_log_loss: np.ndarray,
                   cfg: TopicConfig) -> np.ndarray:
    """Network inference over a window where one forecaster contributes.

    ``raw_ema_rows[i]`` holds the raw workers' EMA regrets usable at row ``i``.
    The implied inference's EMA starts at its first scored regret, so it joins
    the combination from the second row on.
    """
    n = len(inference_rows)
    implied_ema = np.nan
    out = np.full(n, np.nan)
    for i in range(n):
        present = np.isfinite(inference_rows[i])
        raw_ema = _cold_start(np.asarray(raw_ema_rows[i], dtype=float), present)
        out[i] = network_inference(inference_rows[i], [implied[i]],
                                   np.append(raw_ema, implied_ema), cfg)
        ll = to_log_loss(epoch_loss(implied[i], truth[i]), cfg.log_base, cfg.loss_floor)
        implied_ema = update_ema_regret(implied_ema, network_log_loss[i] - ll, cfg.alpha)
    return out
