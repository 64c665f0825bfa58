"""Scalar metrics and robust linear fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..combiner import LOSS_FLOOR, epoch_loss, to_log_loss
from ..core import EvalError

HUBER_DELTA = 1.345
MAD_SCALE = 0.6745


def rmse(pred, true) -> float:
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape or pred.size == 0:
        raise EvalError("rmse needs equal, nonzero lengths")
    return float(np.sqrt(np.mean((pred - true) ** 2)))


def mean_log_loss(inference, truth, log_base: float = 10.0, floor: float = LOSS_FLOOR,
                  diagnostics: Optional[dict] = None) -> float:
    """Mean over epochs of the log squared error.

    If every epoch hits the loss floor the result is flagged in
    ``diagnostics["degenerate"]``.
    """
    d = {} if diagnostics is None else diagnostics
    before = d.get("floored", 0)
    ll = to_log_loss(epoch_loss(inference, np.asarray(truth, dtype=float)), log_base, floor, d)
    ll = np.atleast_1d(ll)
    d["degenerate"] = d.get("floored", 0) - before == ll.size
    return float(np.mean(ll))


@dataclass(frozen=True)
class HuberFit:
    slope: float
    intercept: float
    slope_lo: float = np.nan
    slope_hi: float = np.nan
    n_iter: int = 0

    @property
    def positive_at_1sigma(self) -> bool:
        return bool(self.slope_lo > 0)


def _huber_batch(x: np.ndarray, y: np.ndarray, delta: float, tol: float, max_iter: int):
    """IRLS for y = a + b x on each row of (B, n) arrays; MAD scale re-estimated per step."""
    w = np.ones_like(x)
    a = b = None
    it = 0
    for it in range(1, max_iter + 1):
        sw = w.sum(axis=1)
        mx = (w * x).sum(axis=1) / sw
        my = (w * y).sum(axis=1) / sw
        dx = x - mx[:, None]
        sxx = (w * dx * dx).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            nb = (w * dx * (y - my[:, None])).sum(axis=1) / sxx
        na = my - nb * mx
        done = a is not None and np.all(
            (np.abs(nb - b) <= tol * (1 + np.abs(nb))) | ~np.isfinite(nb))
        a, b = na, nb
        if done:
            break
        r = y - a[:, None] - b[:, None] * x
        # zero-centred MAD, as in the usual robust-linear-model convention
        scale = np.median(np.abs(r), axis=1) / MAD_SCALE
        scale = np.where(scale > 0, scale, np.inf)
        u = np.abs(r) / scale[:, None]
        with np.errstate(divide="ignore"):
            w = np.where(u <= delta, 1.0, delta / u)
    return a, b, it


def huber_fit(x, y, bootstrap_n: int = 1000, seed: int = 0, delta: float = HUBER_DELTA,
              tol: float = 1e-8, max_iter: int = 100) -> HuberFit:
    """Huber regression of y on x with a bootstrap 16th-84th percentile slope band."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise EvalError("huber_fit needs >= 3 aligned points")
    if np.ptp(x) == 0:
        raise EvalError("x has zero variance")
    a, b, it = _huber_batch(x[None, :], y[None, :], delta, tol, max_iter)
    lo = hi = np.nan
    if bootstrap_n > 0:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, x.size, size=(bootstrap_n, x.size))
        _, bs, _ = _huber_batch(x[idx], y[idx], delta, tol, max_iter)
        bs = bs[np.isfinite(bs)]
        if bs.size:
            lo, hi = np.percentile(bs, [16, 84])
    return HuberFit(float(b[0]), float(a[0]), float(lo), float(hi), it)
