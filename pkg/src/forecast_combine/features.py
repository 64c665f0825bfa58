"""Leakage-safe feature matrices from network history and market data.

Each column carries an availability offset: 0 means the value may use data
from the current epoch (worker inferences), 1 means only data from strictly
earlier epochs (losses, regrets, network loss, prices).
"""

from __future__ import annotations

import csv
import dataclasses
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .autocorr import select_lags
from .core import EpochPanel, FeatureError, MarketSeries

WORKER_COLUMN = "worker_id"


@dataclass(frozen=True)
class SpanPlan:
    """Window lengths for the transform families.

    Either one uniform ``spans`` list applied everywhere, or an adaptive
    triple ``(gradient, rolling, ema)`` with one span per family.
    """

    spans: tuple[int, ...] = (3, 14)
    adaptive: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(int(s) for s in self.spans))
        if self.adaptive is not None:
            object.__setattr__(self, "adaptive", tuple(int(s) for s in self.adaptive))
            if len(self.adaptive) != 3:
                raise FeatureError("adaptive span plan needs [gradient, rolling, ema]")
        if any(s < 2 for s in self.all_spans):
            raise FeatureError("spans must be >= 2")

    @classmethod
    def from_config(cls, cfg) -> "SpanPlan":
        return cls(cfg.span_set, cfg.adaptive_spans)

    @property
    def all_spans(self) -> tuple[int, ...]:
        return self.adaptive if self.adaptive is not None else self.spans

    @property
    def gradient(self) -> tuple[int, ...]:
        return (self.adaptive[0],) if self.adaptive else self.spans

    @property
    def rolling(self) -> tuple[int, ...]:
        return (self.adaptive[1],) if self.adaptive else self.spans

    @property
    def ema(self) -> tuple[int, ...]:
        return (self.adaptive[2],) if self.adaptive else self.spans

    @property
    def max_span(self) -> int:
        return max(self.all_spans)

    def label(self) -> str:
        if self.adaptive:
            return "adaptive:" + "-".join(map(str, self.adaptive))
        return "-".join(map(str, self.spans))

    @classmethod
    def parse(cls, text: str) -> "SpanPlan":
        if text.startswith("adaptive:"):
            return cls(adaptive=tuple(int(s) for s in text[9:].split("-")))
        return cls(tuple(int(s) for s in text.split("-")))


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature rows keyed by (epoch, worker index)."""

    epochs: np.ndarray
    workers: np.ndarray
    names: tuple[str, ...]
    offsets: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise FeatureError("duplicate feature names")
        if self.values.shape != (len(self.epochs), len(self.names)):
            raise FeatureError("feature values do not match the row/column keys")

    @property
    def n_rows(self) -> int:
        return len(self.epochs)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return dataclasses.replace(
            self,
            names=tuple(names),
            offsets=tuple(self.offsets[i] for i in idx),
            values=self.values[:, idx],
        )

    def drop(self, names: Sequence[str]) -> "FeatureMatrix":
        gone = set(names)
        return self.select([n for n in self.names if n not in gone])

    def rows(self, mask) -> "FeatureMatrix":
        return dataclasses.replace(
            self, epochs=self.epochs[mask], workers=self.workers[mask], values=self.values[mask]
        )

    def hstack(self, names, offsets, values) -> "FeatureMatrix":
        return dataclasses.replace(
            self,
            names=self.names + tuple(names),
            offsets=self.offsets + tuple(offsets),
            values=np.hstack([self.values, values]),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "worker"] + [f"{n}@{o}" for n, o in zip(self.names, self.offsets)])
            for e, k, row in zip(self.epochs, self.workers, self.values):
                w.writerow([int(e), int(k)] + ["" if np.isnan(v) else repr(float(v)) for v in row])


def _frame(x) -> pd.DataFrame:
    x = np.asarray(x, dtype=float)
    return pd.DataFrame(x if x.ndim == 2 else x[:, None])


def transform_series(x, plan: SpanPlan, name: str = "x") -> dict[str, np.ndarray]:
    """Engineered transforms of a series (1-D) or of each column of a 2-D array.

    Every value at position t uses only x[<= t].  Warm-up positions are NaN.
    """
    arr = np.asarray(x, dtype=float)
    if len(arr) < plan.max_span + 2:
        raise FeatureError(
            f"series '{name}' has {len(arr)} epochs; need >= {plan.max_span + 2}"
        )
    df = _frame(arr)
    out: dict[str, pd.DataFrame] = {}
    grad = df.diff()
    out[f"{name}_grad"] = grad
    out[f"{name}_accel"] = grad.diff()
    for s in plan.gradient:
        out[f"{name}_mom{s}"] = df - df.shift(s)
    for s in plan.ema:
        ewm = df.ewm(span=s, adjust=False, min_periods=s)
        out[f"{name}_ewm_mean{s}"] = ewm.mean()
        out[f"{name}_ewm_std{s}"] = ewm.std(bias=True)
    for s in plan.rolling:
        roll = df.rolling(s, min_periods=s)
        mean = roll.mean()
        out[f"{name}_roll_mean{s}"] = mean
        out[f"{name}_roll_std{s}"] = roll.std(ddof=0)
        out[f"{name}_diff_ma{s}"] = df - mean
    squeeze = arr.ndim == 1
    return {k: (v.to_numpy()[:, 0] if squeeze else v.to_numpy()) for k, v in out.items()}


def cross_sectional_stats(values, epsilon: float = 1e-8):
    """Population mean, std and per-worker z-score over the present workers."""
    v = np.asarray(values, dtype=float)
    present = v[np.isfinite(v)]
    if present.size == 0:
        raise FeatureError("no present workers")
    mean = float(present.mean())
    std = float(present.std())
    return mean, std, (v - mean) / (std + epsilon)


def _cross_sectional_matrix(m: np.ndarray, epsilon: float):
    """Row-wise version of cross_sectional_stats for an (epochs, workers) matrix."""
    cnt = np.isfinite(m).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt > 0, np.nansum(m, axis=1) / np.maximum(cnt, 1), np.nan)
        dev = m - mean[:, None]
        std = np.sqrt(np.nansum(dev**2, axis=1) / np.maximum(cnt, 1))
        std = np.where(cnt > 0, std, np.nan)
        z = dev / (std[:, None] + epsilon)
    return mean, std, z


def _shift(m: np.ndarray, k: int) -> np.ndarray:
    """Shift rows down by ``k`` (value at t becomes the value at t - k)."""
    out = np.full_like(m, np.nan, dtype=float)
    if k < len(m):
        out[k:] = m[: len(m) - k]
    return out


def panel_lags(panel: EpochPanel, stop: int, max_lag: int = 60, confidence: float = 0.99,
               series: Sequence[str] = ("regret", "log_loss")) -> dict[str, tuple[int, ...]]:
    """Union over workers of significant lags, using epoch rows ``[0, stop)`` only."""
    out = {}
    for name in series:
        m = getattr(panel, name)[:stop]
        found: set[int] = set()
        for j in range(m.shape[1]):
            col = m[:, j]
            col = col[np.isfinite(col)]
            if len(col) < 4:
                continue
            found.update(select_lags(col, max_lag, confidence).lags)
        if found:
            out[name] = tuple(sorted(found))
    return out


def build_baseline_features(
    panel: EpochPanel,
    plan: SpanPlan,
    lags: Optional[Mapping[str, Sequence[int]]] = None,
    extras: Optional[Mapping[str, np.ndarray]] = None,
    epsilon: float = 1e-8,
    audit: bool = True,
) -> FeatureMatrix:
    """Per (epoch, worker) features from the network ledger.

    ``lags`` maps a per-worker series name (``regret`` or ``log_loss``) to the
    lags whose shifted copies are added.  ``extras`` are optional externally
    supplied (epochs, workers) matrices such as rewards or scores, used at the
    previous epoch.
    """
    cols: dict[str, tuple[int, np.ndarray]] = {}
    n, w = panel.n_epochs, panel.n_workers

    def add(name, offset, m):
        m = np.asarray(m, dtype=float)
        cols[name] = (offset, np.broadcast_to(m[:, None], (n, w)) if m.ndim == 1 else m)

    if np.isfinite(panel.inference).any():
        add("inference", 0, panel.inference)
        for k, v in transform_series(panel.inference, plan, "inference").items():
            add(k, 0, v)
    for name in ("log_loss", "regret"):
        m = getattr(panel, name)
        if not np.isfinite(m).any():
            continue
        add(f"{name}_prev", 1, _shift(m, 1))
        for k, v in transform_series(m, plan, name).items():
            add(k, 1, _shift(v, 1))
        mean, std, z = _cross_sectional_matrix(m, epsilon)
        add(f"{name}_xs_mean", 1, _shift(mean[:, None], 1)[:, 0])
        add(f"{name}_xs_std", 1, _shift(std[:, None], 1)[:, 0])
        add(f"{name}_xs_z", 1, _shift(z, 1))
        for k in (lags or {}).get(name, ()):
            if k >= 2:
                add(f"{name}_lag{k}", 1, _shift(m, k))
    net = panel.network_log_loss
    if np.isfinite(net).any():
        add("network_log_loss_prev", 1, _shift(net[:, None], 1)[:, 0])
        for k, v in transform_series(net, plan, "network_log_loss").items():
            add(k, 1, _shift(v[:, None], 1)[:, 0])
    for name, m in (extras or {}).items():
        add(f"{name}_prev", 1, _shift(np.asarray(m, dtype=float), 1))

    present = panel.present()
    ei, wi = np.nonzero(present)
    names = [WORKER_COLUMN] + list(cols)
    offsets = [0] + [cols[k][0] for k in cols]
    values = np.empty((len(ei), len(names)))
    values[:, 0] = wi
    for c, k in enumerate(cols, start=1):
        values[:, c] = cols[k][1][ei, wi]
    fm = FeatureMatrix(panel.epochs[ei], wi, tuple(names), tuple(offsets), values)
    if audit:
        _audit(panel, plan, lags, extras, epsilon, fm)
    return fm


def _truncate(panel: EpochPanel, i: int) -> EpochPanel:
    """Panel as known when forecasting epoch index ``i``."""
    def cut(a, hide_last):
        a = np.array(a[: i + 1], dtype=float)
        if hide_last:
            a[i] = np.nan
        return a

    return dataclasses.replace(
        panel,
        epochs=panel.epochs[: i + 1],
        truth=cut(panel.truth, True),
        inference=cut(panel.inference, False),
        loss=cut(panel.loss, True),
        log_loss=cut(panel.log_loss, True),
        regret=cut(panel.regret, True),
        network_loss=cut(panel.network_loss, True),
        network_log_loss=cut(panel.network_log_loss, True),
        ema_regret=cut(panel.ema_regret, True),
        naive_inference=None if panel.naive_inference is None else cut(panel.naive_inference, True),
    )


def _audit(panel, plan, lags, extras, epsilon, fm: FeatureMatrix, n_probes: int = 2):
    """Rebuild features from truncated panels and compare probe rows."""
    lo = plan.max_span + 2
    if panel.n_epochs <= lo:
        return
    probes = sorted({lo + (panel.n_epochs - 1 - lo) * (k + 1) // n_probes for k in range(n_probes)})
    for i in probes:
        # the hidden epoch keeps its inference, so presence is unchanged
        cut = _truncate(panel, i)
        if not panel.has_truth:
            cut = dataclasses.replace(cut, regret=_keep_presence(cut.regret, panel.regret[i]))
        ex = None
        if extras:
            ex = {k: _hide_last(np.asarray(v, dtype=float)[: i + 1]) for k, v in extras.items()}
        small = build_baseline_features(cut, plan, lags, ex, epsilon, audit=False)
        a = fm.rows(fm.epochs == panel.epochs[i])
        b = small.rows(small.epochs == panel.epochs[i])
        if a.names != b.names or a.n_rows != b.n_rows:
            raise FeatureError(f"availability audit: schema differs at epoch {panel.epochs[i]}")
        same = np.isclose(a.values, b.values, rtol=1e-9, atol=1e-12) | (
            np.isnan(a.values) & np.isnan(b.values))
        if not same.all():
            bad = sorted({a.names[c] for c in np.nonzero(~same)[1]})
            raise FeatureError(f"availability violation at epoch {panel.epochs[i]}: {bad}")


def _hide_last(a):
    a = a.copy()
    a[-1] = np.nan
    return a


def _keep_presence(regret_cut: np.ndarray, row: np.ndarray) -> np.ndarray:
    # regret-only panels mark presence by regret; keep a placeholder that no feature reads
    out = regret_cut.copy()
    out[-1] = np.where(np.isfinite(row), 0.0, np.nan)
    return out


def build_market_features(mkt: MarketSeries, plan: SpanPlan) -> dict[str, np.ndarray]:
    """Per-epoch price features, each shifted so epoch i sees prices up to i - 1."""
    close = np.asarray(mkt.close, dtype=float)
    if len(close) < plan.max_span + 2:
        raise FeatureError(f"market series has {len(close)} epochs; need >= {plan.max_span + 2}")
    raw: dict[str, np.ndarray] = {"close": close}
    raw.update(transform_series(close, plan, "close"))
    with np.errstate(divide="ignore", invalid="ignore"):
        prev = np.concatenate([[np.nan], close[:-1]])
        pct = close / prev - 1.0
        logret = np.log(close / prev)
    raw["close_pct"] = pct
    raw.update({k: v for k, v in transform_series(pct, plan, "pct").items()
                if not k.startswith("pct_roll_std")})
    lr = pd.Series(logret)
    for s in plan.rolling:
        roll = pd.Series(close).rolling(s, min_periods=s)
        mean = roll.mean().to_numpy()
        std = roll.std(ddof=0).to_numpy()
        raw[f"close_vol{s}"] = lr.rolling(s, min_periods=s).std(ddof=0).to_numpy()
        with np.errstate(divide="ignore", invalid="ignore"):
            band = np.where(std > 1e-12 * np.abs(mean), (close - mean) / (2.0 * std), 0.0)
            raw[f"close_bb{s}"] = np.where(np.isnan(mean), np.nan, band)
            raw[f"close_ratio{s}"] = close / mean
    if mkt.high is not None and mkt.low is not None:
        raw["hl_range"] = (mkt.high - mkt.low) / close
    if mkt.open is not None:
        raw["oc_return"] = close / mkt.open - 1.0
    if mkt.volume is not None:
        raw["volume"] = np.asarray(mkt.volume, dtype=float)
        raw.update(transform_series(mkt.volume, plan, "volume"))
    return {k: _shift(np.asarray(v, dtype=float)[:, None], 1)[:, 0] for k, v in raw.items()}


def add_epoch_columns(fm: FeatureMatrix, epochs: np.ndarray, columns: Mapping[str, np.ndarray],
                      offset: int = 1) -> FeatureMatrix:
    """Broadcast per-epoch columns (aligned with ``epochs``) onto the feature rows."""
    pos = np.searchsorted(epochs, fm.epochs)
    if np.any(pos >= len(epochs)) or np.any(epochs[np.minimum(pos, len(epochs) - 1)] != fm.epochs):
        raise FeatureError("epoch columns do not cover every feature row")
    names = list(columns)
    values = np.column_stack([np.asarray(columns[k], dtype=float)[pos] for k in names])
    return fm.hstack(names, [offset] * len(names), values)


def prune_features(X: FeatureMatrix, y, var_floor: float = 0.0, corr_cap: float = 0.95,
                   keep: Sequence[str] = ()) -> FeatureMatrix:
    """Drop zero-variance columns, then the weaker member of each highly correlated pair.

    "Weaker" means smaller |corr(column, y)|; ties drop the later name.  Columns
    are visited in name order.  NaNs are median-imputed for the statistics.
    """
    y = np.asarray(y, dtype=float)
    V = _impute(X.values)
    var = V.var(axis=0)
    names = sorted(X.names)
    idx = {n: X.names.index(n) for n in names}
    alive = [n for n in names if var[idx[n]] > var_floor or n in keep]
    if not alive:
        return X.select([])
    A = V[:, [idx[n] for n in alive]]
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.corrcoef(A, rowvar=False)
        yc = _corr_with(A, y)
    C = np.atleast_2d(np.nan_to_num(C))
    dropped = np.zeros(len(alive), dtype=bool)
    for a in range(len(alive)):
        if dropped[a]:
            continue
        for b in range(a + 1, len(alive)):
            if dropped[b] or abs(C[a, b]) <= corr_cap:
                continue
            loser = a if abs(yc[a]) < abs(yc[b]) else b
            if alive[loser] in keep:
                loser = b if loser == a else a
                if alive[loser] in keep:
                    continue
            dropped[loser] = True
            if loser == a:
                break
    kept = [n for n, d in zip(alive, dropped) if not d]
    return X.select([n for n in X.names if n in set(kept)])


def _impute(V: np.ndarray) -> np.ndarray:
    V = np.array(V, dtype=float)
    bad = ~np.isfinite(V)
    if bad.any():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            med = np.nanmedian(np.where(bad, np.nan, V), axis=0)
        med = np.where(np.isfinite(med), med, 0.0)
        V[bad] = np.take(med, np.nonzero(bad)[1])
    return V


def _corr_with(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    a = A - A.mean(axis=0)
    b = y - y.mean()
    den = np.sqrt((a * a).sum(axis=0) * (b @ b))
    out = (a.T @ b) / np.where(den > 0, den, np.inf)
    return np.nan_to_num(out)
