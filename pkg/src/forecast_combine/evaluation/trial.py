"""One benchmark or replay trial: score, featurize, train, forecast, combine."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..combiner import (
    forecast_implied_inference,
    network_series,
    roll_forward,
    weights_from_forecast,
)
from ..core import (
    EpochPanel,
    ForecastCombineError,
    TargetKind,
    TopicConfig,
    ValidationError,
    validate_config,
)
from ..features import (
    FeatureMatrix,
    SpanPlan,
    add_epoch_columns,
    build_baseline_features,
    build_market_features,
    panel_lags,
)
from ..learner import Forecaster, build_targets, forecast_rows, train_forecaster, train_window
from ..synth import Scenario
from .metrics import HuberFit, huber_fit, mean_log_loss, rmse


def score_panel(panel: EpochPanel, cfg: TopicConfig, diagnostics: Optional[dict] = None) -> EpochPanel:
    """Fill losses, regrets, naive/network losses and EMA regrets from truth + inferences."""
    if not panel.has_truth:
        return panel
    s = roll_forward(panel.truth, panel.inference, cfg, diagnostics)
    return dataclasses.replace(panel, **s)


@dataclass
class Prepared:
    """A scored panel and what the forecaster may learn from, for one train window."""

    scenario: Scenario
    panel: EpochPanel
    cfg: TopicConfig
    lags: dict
    window: tuple[int, int]
    diagnostics: dict = field(default_factory=dict)
    extras: Optional[dict[str, np.ndarray]] = None

    @property
    def test_slice(self) -> slice:
        return slice(self.window[1], self.window[1] + self.cfg.n_test)


def prepare(scenario: Scenario, cfg: TopicConfig) -> Prepared:
    validate_config(cfg)
    panel = scenario.panel
    if not panel.has_truth and cfg.target_kind is TargetKind.LOSS:
        raise ValidationError("LOSS target needs a truth-based scenario")
    diagnostics: dict = {}
    panel = score_panel(panel, cfg, diagnostics)
    start, stop = train_window(panel.n_epochs, cfg)
    first = max(0, start - _history(cfg))
    panel = _trim(panel, first)
    extras = None
    if scenario.extras:
        extras = {k: np.asarray(v, dtype=float)[first:] for k, v in scenario.extras.items()}
    start, stop = train_window(panel.n_epochs, cfg)
    lags = {}
    if cfg.use_lags:
        lags = panel_lags(panel, stop, cfg.max_lag, cfg.lag_confidence)
        lags = {k: tuple(l for l in v if l <= cfg.max_lag) for k, v in lags.items()}
    return Prepared(scenario, panel, cfg, lags, (start, stop), diagnostics, extras)


def _history(cfg: TopicConfig) -> int:
    # epochs kept before the train window so its first rows have full features
    return cfg.max_span + (cfg.max_lag if cfg.use_lags else 0) + 2


def _trim(panel: EpochPanel, first: int) -> EpochPanel:
    if first <= 0:
        return panel
    cut = {}
    for f in dataclasses.fields(panel):
        v = getattr(panel, f.name)
        cut[f.name] = v[first:] if isinstance(v, np.ndarray) else v
    return dataclasses.replace(panel, **cut)


def build_features(prep: Prepared, plan: Optional[SpanPlan] = None, audit: bool = True) -> FeatureMatrix:
    plan = SpanPlan.from_config(prep.cfg) if plan is None else plan
    fm = build_baseline_features(prep.panel, plan, prep.lags, prep.extras, prep.cfg.epsilon, audit)
    mkt = prep.scenario.market
    if mkt is not None:
        pos = np.searchsorted(mkt.epochs, prep.panel.epochs)
        cols = build_market_features(mkt, plan)
        cols = {k: v[pos] for k, v in cols.items()}
        fm = add_epoch_columns(fm, prep.panel.epochs, cols)
    return fm


@dataclass
class TrialResult:
    """Per-epoch records of the test window plus summaries recomputable from them."""

    scenario: str
    seed: int
    config: TopicConfig
    worker_ids: tuple[str, ...]
    epochs: np.ndarray
    true_target: np.ndarray
    predicted: np.ndarray
    truth: Optional[np.ndarray] = None
    inference: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    implied: Optional[np.ndarray] = None
    naive: Optional[np.ndarray] = None
    network: Optional[np.ndarray] = None
    eval_workers: tuple[str, ...] = ()
    summary: dict = field(default_factory=dict)
    huber: dict = field(default_factory=dict)

    @property
    def has_combination(self) -> bool:
        return self.truth is not None

    def compute_summary(self) -> dict:
        out: dict = {"worker_rmse": {}}
        for j, w in enumerate(self.worker_ids):
            ok = np.isfinite(self.true_target[:, j]) & np.isfinite(self.predicted[:, j])
            if ok.any():
                out["worker_rmse"][w] = rmse(self.predicted[ok, j], self.true_target[ok, j])
        ok = np.isfinite(self.true_target) & np.isfinite(self.predicted)
        if ok.any():
            out["rmse"] = rmse(self.predicted[ok], self.true_target[ok])
        if self.truth is not None:
            base, floor = self.config.log_base, self.config.loss_floor
            out["naive_log_loss"] = mean_log_loss(self.naive, self.truth, base, floor)
            if self.implied is not None:
                out["implied_log_loss"] = mean_log_loss(self.implied, self.truth, base, floor)
                out["network_log_loss"] = mean_log_loss(self.network, self.truth, base, floor)
        return out

    def fit_huber(self, bootstrap_n: int = 1000) -> dict[str, HuberFit]:
        fits = {}
        for j, w in enumerate(self.worker_ids):
            ok = np.isfinite(self.true_target[:, j]) & np.isfinite(self.predicted[:, j])
            x, y = self.true_target[ok, j], self.predicted[ok, j]
            if ok.sum() >= 3 and np.ptp(x) > 0:
                fits[w] = huber_fit(x, y, bootstrap_n, seed=self.seed + j)
        return fits


def _predicted_matrix(prep: Prepared, fm: FeatureMatrix, f: Forecaster) -> np.ndarray:
    sl = prep.test_slice
    epochs = prep.panel.epochs[sl]
    test = fm.rows((fm.epochs >= epochs[0]) & (fm.epochs <= epochs[-1]))
    pred = forecast_rows(f, test)
    out = np.full((len(epochs), prep.panel.n_workers), np.nan)
    out[np.searchsorted(epochs, test.epochs), test.workers] = pred
    return out


def evaluate(prep: Prepared, fm: FeatureMatrix, f: Optional[Forecaster], seed: int,
             huber_bootstrap: int = 0) -> TrialResult:
    """Forecast the test window with ``f`` (None: no forecaster) and assemble the result."""
    cfg, panel = prep.cfg, prep.panel
    sl = prep.test_slice
    targets = build_targets(panel, cfg.target_kind, cfg.epsilon)[sl]
    n_test = targets.shape[0]
    predicted = _predicted_matrix(prep, fm, f) if f is not None else np.full_like(targets, np.nan)
    res = TrialResult(prep.scenario.name, seed, cfg, panel.worker_ids, panel.epochs[sl],
                      targets, predicted, eval_workers=prep.scenario.eval_workers)
    if panel.has_truth:
        res.truth = np.array(panel.truth[sl])
        res.inference = np.array(panel.inference[sl])
        res.naive = np.array(panel.naive_inference[sl])
        if f is None:
            res.network = res.naive.copy()
        else:
            prev_net = panel.network_log_loss[sl.start - 1:sl.stop - 1]
            weights = np.full_like(predicted, np.nan)
            implied = np.empty(n_test)
            for i in range(n_test):
                present = np.isfinite(res.inference[i])
                wv = weights_from_forecast(cfg.target_kind, np.where(present, predicted[i], np.nan),
                                           prev_net[i], cfg)
                weights[i] = wv.weights
                implied[i] = forecast_implied_inference(res.inference[i], wv.weights)
            res.weights = weights
            res.implied = implied
            res.network = network_series(res.inference, implied, res.truth,
                                         panel.ema_regret[sl.start - 1:sl.stop - 1],
                                         panel.network_log_loss[sl], cfg)
    res.summary = res.compute_summary()
    if huber_bootstrap > 0 and f is not None:
        res.huber = res.fit_huber(huber_bootstrap)
    return res


def run_trial(scenario: Scenario, cfg: TopicConfig, seed: Optional[int] = None,
              forecast: bool = True, huber_bootstrap: int = 0) -> TrialResult:
    """Run one trial end to end; ``seed`` (default ``cfg.seed``) drives the learner."""
    seed = cfg.seed if seed is None else seed
    cfg = cfg.replace(seed=seed)
    try:
        prep = prepare(scenario, cfg)
        fm = build_features(prep)
        f = train_forecaster(prep.panel, fm, cfg, seed=seed) if forecast else None
        return evaluate(prep, fm, f, seed, huber_bootstrap)
    except ForecastCombineError as e:
        e.args = (f"[{scenario.name} seed={seed}] {e.args[0] if e.args else ''}",)
        raise
