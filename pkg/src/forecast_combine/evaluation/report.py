"""Per-worker context-awareness diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import EvalError
from .metrics import HuberFit, huber_fit
from .trial import TrialResult


@dataclass(frozen=True)
class AwarenessRow:
    worker: str
    fit: HuberFit
    median_true: float
    median_predicted: float
    n: int

    @property
    def aware(self) -> bool:
        return self.fit.positive_at_1sigma


def context_awareness_report(trial: TrialResult, bootstrap_n: int = 1000) -> list[AwarenessRow]:
    """Huber slope of predicted on true target for every worker with usable data.

    Workers whose true targets are constant over the test window are skipped.
    """
    if not np.isfinite(trial.predicted).any():
        raise EvalError("trial has no forecasts")
    rows = []
    for j, w in enumerate(trial.worker_ids):
        x, y = trial.true_target[:, j], trial.predicted[:, j]
        ok = np.isfinite(x) & np.isfinite(y)
        if ok.sum() < 3 or np.ptp(x[ok]) == 0:
            continue
        fit = trial.huber.get(w) or huber_fit(x[ok], y[ok], bootstrap_n, seed=trial.seed + j)
        rows.append(AwarenessRow(w, fit, float(np.median(x[ok])), float(np.median(y[ok])),
                                 int(ok.sum())))
    return rows


def awareness_table(rows: list[AwarenessRow]) -> list[dict]:
    return [{"worker": r.worker, "slope": r.fit.slope, "intercept": r.fit.intercept,
             "slope_lo": r.fit.slope_lo, "slope_hi": r.fit.slope_hi,
             "median_true": r.median_true, "median_predicted": r.median_predicted,
             "positive_1sigma": r.aware, "n": r.n} for r in rows]
