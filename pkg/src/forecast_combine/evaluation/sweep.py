"""Repeated trials over a grid of target kinds, model structures and span sets."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import Structure, TargetKind, TopicConfig, config_hash
from ..features import SpanPlan
from ..learner import train_forecaster
from ..synth import Scenario
from .trial import build_features, evaluate, prepare

SWEEP_COLUMNS = ("target", "structure", "spans", "n_train", "trial", "seed",
                 "mean_log_loss", "naive_log_loss")

DEFAULT_SPAN_SETS: tuple[tuple[int, ...], ...] = (
    (3,), (7,), (14,), (3, 7), (3, 14), (7, 14), (3, 30), (14, 30), (3, 14, 60),
)
THREADS_ENV = "FORECAST_COMBINE_THREADS"


@dataclass(frozen=True)
class SweepGrid:
    targets: tuple[TargetKind, ...] = tuple(TargetKind)
    structures: tuple[Structure, ...] = tuple(Structure)
    span_sets: tuple[tuple[int, ...], ...] = DEFAULT_SPAN_SETS
    n_trains: tuple[int, ...] = (1000,)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(TargetKind(t) for t in self.targets))
        object.__setattr__(self, "structures", tuple(Structure(s) for s in self.structures))
        object.__setattr__(self, "span_sets", tuple(tuple(int(x) for x in s) for s in self.span_sets))
        object.__setattr__(self, "n_trains", tuple(int(n) for n in self.n_trains))
        if not (self.targets and self.structures and self.span_sets and self.n_trains):
            raise ValueError("sweep grid has an empty axis")

    @property
    def cells(self) -> list[tuple[str, str, str, int]]:
        return [(t.value, s.value, SpanPlan(sp).label(), n)
                for n in self.n_trains for t in self.targets
                for s in self.structures for sp in self.span_sets]


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _task(scenario_fn: Callable[[int], Scenario], cfg: TopicConfig, grid: SweepGrid,
          spans: tuple[int, ...], n_train: int, trial: int, seed: int) -> list[dict]:
    """All cells sharing one (seed, span set, n_train): features are built once."""
    scenario = scenario_fn(seed)
    base = cfg.replace(span_set=spans, adaptive_spans=None, n_train=n_train, seed=seed)
    label = SpanPlan(spans).label()
    rows = []
    fm = prep = None
    for target in grid.targets:
        tcfg = base.replace(target_kind=target, structure=Structure.PER_INFERER)
        if prep is None:
            prep = prepare(scenario, tcfg)
            fm = build_features(prep)
        else:
            prep = dataclasses.replace(prep, cfg=tcfg)
        per_inferer = Structure.PER_INFERER in grid.structures
        fcfg = tcfg if per_inferer else tcfg.replace(structure=Structure.GLOBAL)
        f = train_forecaster(prep.panel, fm, fcfg, seed=seed)
        for structure in grid.structures:
            g = f if structure is Structure.PER_INFERER else f.as_global()
            res = evaluate(prep, fm, g, seed)
            rows.append({
                "target": target.value, "structure": structure.value, "spans": label,
                "n_train": n_train, "trial": trial, "seed": seed,
                "mean_log_loss": res.summary["implied_log_loss"],
                "naive_log_loss": res.summary["naive_log_loss"],
            })
    return rows


def _task_star(args):
    return _task(*args)


@dataclass
class SweepTable:
    grid: SweepGrid
    n_repeats: int
    base_seed: int
    rows: list[dict] = field(default_factory=list)
    config_hash: str = ""

    def cell(self, target, structure, spans, n_train: Optional[int] = None) -> np.ndarray:
        """Trial log losses of one cell, ordered by trial index."""
        target, structure = TargetKind(target).value, Structure(structure).value
        label = spans if isinstance(spans, str) else SpanPlan(tuple(spans)).label()
        n_train = self.grid.n_trains[0] if n_train is None else n_train
        sel = [r for r in self.rows if (r["target"], r["structure"], r["spans"], r["n_train"])
               == (target, structure, label, n_train)]
        sel.sort(key=lambda r: r["trial"])
        return np.array([r["mean_log_loss"] for r in sel])

    def median(self, target, structure, spans, n_train: Optional[int] = None) -> float:
        return float(np.median(self.cell(target, structure, spans, n_train)))

    def medians(self) -> dict[tuple, float]:
        return {c: float(np.median(self.cell(*c))) for c in self.grid.cells}

    def target_median(self, target, structure) -> float:
        """Median over every trial of every span set for one (target, structure)."""
        t, s = TargetKind(target).value, Structure(structure).value
        vals = [r["mean_log_loss"] for r in self.rows if r["target"] == t and r["structure"] == s]
        return float(np.median(vals))

    def naive_by_trial(self) -> dict[int, float]:
        return {r["trial"]: r["naive_log_loss"] for r in self.rows}

    def median_se(self, target, structure, spans, n_boot: int = 1000, seed: int = 0) -> float:
        """Bootstrap standard error of a cell median."""
        x = self.cell(target, structure, spans)
        rng = np.random.default_rng(seed)
        meds = np.median(x[rng.integers(0, len(x), (n_boot, len(x)))], axis=1)
        return float(np.std(meds, ddof=1))

    def to_csv(self, header_comment: Optional[str] = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "mean_log_loss": repr(float(r["mean_log_loss"])),
                        "naive_log_loss": repr(float(r["naive_log_loss"]))})
        return buf.getvalue()

    def summary(self) -> dict:
        cells = []
        for c in self.grid.cells:
            x = self.cell(*c)
            cells.append({"target": c[0], "structure": c[1], "spans": c[2], "n_train": c[3],
                          "n": int(len(x)), "median": float(np.median(x)),
                          "median_se": self.median_se(*c[:3])})
        naive = np.array(list(self.naive_by_trial().values()))
        return {"n_repeats": self.n_repeats, "base_seed": self.base_seed,
                "config_hash": self.config_hash, "naive_median": float(np.median(naive)),
                "cells": cells}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True)


def run_sweep(scenario_fn: Callable[[int], Scenario], grid: SweepGrid = SweepGrid(),
              n_repeats: int = 30, base_seed: int = 0, cfg: Optional[TopicConfig] = None,
              workers: Optional[int] = None) -> SweepTable:
    """``n_repeats`` trials per grid cell with seeds ``base_seed + trial``.

    ``scenario_fn(seed)`` must be picklable when ``workers > 1``.  Rows are
    sorted by cell and trial, so the table does not depend on completion order.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    cfg = TopicConfig(n_test=200) if cfg is None else cfg
    workers = default_threads() if workers is None else max(1, workers)
    jobs = [(scenario_fn, cfg, grid, spans, n, r, base_seed + r)
            for r in range(n_repeats) for n in grid.n_trains for spans in grid.span_sets]
    if workers == 1 or len(jobs) == 1:
        chunks = [_task_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            chunks = list(ex.map(_task_star, jobs))
    order = {c: k for k, c in enumerate(grid.cells)}
    rows = sorted((r for ch in chunks for r in ch),
                  key=lambda r: (order[(r["target"], r["structure"], r["spans"], r["n_train"])],
                                 r["trial"]))
    grid_key = {"targets": [t.value for t in grid.targets],
                "structures": [s.value for s in grid.structures],
                "span_sets": [list(s) for s in grid.span_sets], "n_trains": list(grid.n_trains)}
    return SweepTable(grid, n_repeats, base_seed, rows, config_hash(cfg, grid_key))
