from .report import AwarenessRow, awareness_table, context_awareness_report
from .sweep import DEFAULT_SPAN_SETS, SWEEP_COLUMNS, SweepGrid, SweepTable, run_sweep
from .metrics import HuberFit, huber_fit, mean_log_loss, rmse
from .trial import (
    Prepared,
    TrialResult,
    build_features,
    evaluate,
    prepare,
    run_trial,
    score_panel,
)

__all__ = [
    "AwarenessRow",
    "DEFAULT_SPAN_SETS",
    "SWEEP_COLUMNS",
    "SweepGrid",
    "SweepTable",
    "awareness_table",
    "context_awareness_report",
    "run_sweep",
    "HuberFit",
    "Prepared",
    "TrialResult",
    "build_features",
    "evaluate",
    "huber_fit",
    "mean_log_loss",
    "prepare",
    "rmse",
    "run_trial",
    "score_panel",
]
