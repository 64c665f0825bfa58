"""Sample ACF, Durbin-Levinson PACF and significant-lag selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LagSet:
    lags: tuple[int, ...]
    confidence: float

    def __iter__(self):
        return iter(self.lags)

    def __len__(self):
        return len(self.lags)

    def __contains__(self, k):
        return k in self.lags


def _clean(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    return x[np.isfinite(x)]


def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelation for lags ``0..max_lag``.

    r_k = sum_t (x_t - mean)(x_{t+k} - mean) / sum_t (x_t - mean)^2
    Missing values are dropped before computing.
    """
    x = _clean(x)
    n = len(x)
    if n <= max_lag + 1:
        raise ValueError(f"series of length {n} too short for max_lag={max_lag}")
    d = x - x.mean()
    denom = float(d @ d)
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if denom <= 1e-300:
        logger.warning("zero-variance series: autocorrelations reported as 0")
        return out
    for k in range(1, max_lag + 1):
        out[k] = float(d[:-k] @ d[k:]) / denom
    return out


def pacf(x, max_lag: int) -> np.ndarray:
    """Partial autocorrelation for lags ``0..max_lag`` via Durbin-Levinson."""
    r = acf(x, max_lag)
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0 or np.all(r[1:] == 0):
        return out
    phi = np.zeros(max_lag + 1)
    v = 1.0
    for k in range(1, max_lag + 1):
        num = r[k] - phi[1:k] @ r[k - 1:0:-1]
        if v <= 1e-15:
            break
        a = num / v
        new = phi.copy()
        new[k] = a
        new[1:k] = phi[1:k] - a * phi[k - 1:0:-1]
        phi = new
        v *= 1.0 - a * a
        out[k] = a
    return out


def significance_band(n: int, confidence: float = 0.99) -> float:
    """Two-sided normal band half-width z / sqrt(n)."""
    z = NormalDist().inv_cdf((1.0 + confidence) / 2.0)
    return z / np.sqrt(n)


def select_lags(x, max_lag: int, confidence: float = 0.99) -> LagSet:
    """Lags >= 2 significant in both the ACF and the PACF."""
    x = _clean(x)
    max_lag = min(max_lag, len(x) - 2)
    if max_lag < 2:
        return LagSet((), confidence)
    band = significance_band(len(x), confidence)
    r = acf(x, max_lag)
    pr = pacf(x, max_lag)
    lags = tuple(k for k in range(2, max_lag + 1)
                 if abs(r[k]) > band and abs(pr[k]) > band)
    return LagSet(lags, confidence)
