"""Command-line entry point: ``forecast-combine bench|sweep|replay|report``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import functools
import io
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ForecastCombineError, TopicConfig, ValidationError, validate_config
from .dataio import (
    ScenarioSpec,
    dump_config,
    json_dumps,
    load_config,
    make_scenario,
    read_stamp,
    run_hash,
    stamp,
)
from .evaluation import (
    SweepGrid,
    TrialResult,
    awareness_table,
    context_awareness_report,
    run_sweep,
    run_trial,
)

log = logging.getLogger("forecast_combine")

TRIAL_COLUMNS = ("epoch", "worker_id", "truth", "inference", "true_target", "predicted",
                 "weight", "implied", "naive", "network")
EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _num(v) -> str:
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def trial_csv(res: TrialResult, header: str) -> str:
    """Long format: one row per (test epoch, worker)."""
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)

    def col(a, i, j=None):
        if a is None:
            return ""
        return _num(a[i] if j is None else a[i, j])

    for i, e in enumerate(res.epochs):
        for j, wid in enumerate(res.worker_ids):
            w.writerow([int(e), wid, col(res.truth, i), col(res.inference, i, j),
                        col(res.true_target, i, j), col(res.predicted, i, j),
                        col(res.weights, i, j), col(res.implied, i), col(res.naive, i),
                        col(res.network, i)])
    return buf.getvalue()


def trial_summary(res: TrialResult, h: str) -> dict:
    out = {"config_hash": h, "seed": res.seed, "scenario": res.scenario,
           "config": res.config.to_dict(), "summary": res.summary}
    if res.huber:
        out["awareness"] = awareness_table(context_awareness_report(res))
    return out


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _settings(args) -> tuple[TopicConfig, ScenarioSpec]:
    cfg, spec = load_config(args.config) if args.config else (TopicConfig(), ScenarioSpec())
    kind = "replay" if args.command == "replay" else getattr(args, "scenario", None)
    changes = {name: getattr(args, name) for name in ("inference", "truth", "market", "rewards")
               if getattr(args, name, None)}
    if kind:
        changes["kind"] = kind
    if changes:
        spec = ScenarioSpec(**{**spec.to_dict(), **changes})
    if spec.kind in ("sine", "periodic") and not args.config:
        # regret-only benchmarks have no truth; the default target is regret
        cfg = cfg.replace(target_kind="REGRET")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    validate_config(cfg)
    return cfg, spec


def cmd_trial(args, cfg: TopicConfig, spec: ScenarioSpec) -> int:
    out = Path(args.out)
    h = run_hash(cfg, spec)
    repeats = args.repeats or 1
    for r in range(repeats):
        seed = cfg.seed + r
        res = run_trial(make_scenario(spec, seed, cfg), cfg, seed, huber_bootstrap=args.bootstrap)
        suffix = "" if repeats == 1 else f"_seed{seed}"
        _write(out / f"trial{suffix}.csv", trial_csv(res, stamp(h, seed)))
        _write(out / f"summary{suffix}.json", json_dumps(trial_summary(res, h)) + "\n")
        log.info("seed %d: %s", seed, {k: v for k, v in res.summary.items() if k != "worker_rmse"})
    _write(out / "config.ini", dump_config(cfg, spec))
    return EXIT_OK


def cmd_sweep(args, cfg: TopicConfig, spec: ScenarioSpec) -> int:
    if args.config is None:
        cfg = cfg.replace(n_test=200)
    grid = SweepGrid(n_trains=(cfg.n_train,))
    if args.spans:
        spans = tuple(tuple(int(x) for x in s.split(",")) for s in args.spans)
        grid = dataclasses.replace(grid, span_sets=spans)
    fn = functools.partial(_scenario_for_seed, spec, cfg)
    table = run_sweep(fn, grid, args.repeats or 30, cfg.seed, cfg, args.threads)
    h = run_hash(cfg, spec, {"grid": table.config_hash})
    out = Path(args.out)
    _write(out / "sweep.csv", table.to_csv(stamp(h, cfg.seed)))
    _write(out / "sweep.json", json_dumps({**table.summary(), "config_hash": h}) + "\n")
    _write(out / "config.ini", dump_config(cfg, spec))
    return EXIT_OK


def _scenario_for_seed(spec: ScenarioSpec, cfg: TopicConfig, seed: int):
    return make_scenario(spec, seed, cfg)


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    import pandas as pd

    stamps = {p: read_stamp(p) for p in args.inputs}
    hashes = {s["config_hash"] for s in stamps.values()}
    if len(hashes) > 1:
        raise ValidationError("inputs carry different config hashes")
    if args.config:
        cfg, spec = load_config(args.config)
        sweep_like = any("target" in pd.read_csv(p, comment="#", nrows=0).columns
                         for p in args.inputs)
        if not sweep_like and run_hash(cfg, spec) not in hashes:
            raise ValidationError("config hash does not match the inputs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        df = pd.read_csv(path, comment="#")
        fig, ax = plt.subplots(figsize=(8, 4))
        if "target" in df.columns:
            cells = df.groupby(["target", "structure", "spans"], sort=True)["mean_log_loss"]
            labels = [f"{t}/{s[0]}/{sp}" for (t, s, sp), _ in cells]
            ax.violinplot([g.to_numpy() for _, g in cells], showmedians=True)
            ax.set_xticks(range(1, len(labels) + 1), labels, rotation=90, fontsize=6)
            ax.set_ylabel("mean log loss")
        else:
            ep = df.groupby("epoch").first()
            for col in ("truth", "naive", "implied"):
                if ep[col].notna().any():
                    ax.plot(ep.index, ep[col], label=col, lw=1)
            ax.set_xlabel("epoch")
            ax.legend()
        fig.tight_layout()
        fig.savefig(out / (Path(path).stem + ".svg"), metadata={"Date": None})
        plt.close(fig)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="trial seed (default: config)")
    common.add_argument("--repeats", type=int, default=None, help="number of seeds")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--config", default=None, help="INI config with [topic]/[scenario]")

    p = argparse.ArgumentParser(prog="forecast-combine", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", parents=[common], help="run one synthetic benchmark trial")
    b.add_argument("scenario", choices=("sine", "periodic", "contextual"))
    b.add_argument("--bootstrap", type=int, default=1000, help="Huber bootstrap resamples")

    s = sub.add_parser("sweep", parents=[common], help="repeat trials over the model grid")
    s.add_argument("--scenario", choices=ScenarioSpec.KINDS, default=None)
    s.add_argument("--spans", nargs="+", default=None, help="span sets such as 3 3,14")
    s.add_argument("--threads", type=int, default=None, help="worker processes")
    for name in ("inference", "truth", "market", "rewards"):
        s.add_argument(f"--{name}", default=None, help=f"{name} CSV for replay")

    r = sub.add_parser("replay", parents=[common], help="run a trial on recorded CSV data")
    r.add_argument("--inference", required=False)
    r.add_argument("--truth", required=False)
    r.add_argument("--market", default=None)
    r.add_argument("--rewards", default=None)
    r.add_argument("--bootstrap", type=int, default=1000)

    rep = sub.add_parser("report", help="render trial or sweep CSVs to SVG")
    rep.add_argument("inputs", nargs="+")
    rep.add_argument("--out", default="out")
    rep.add_argument("--config", default=None)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg, spec = _settings(args)
        if args.command == "sweep":
            return cmd_sweep(args, cfg, spec)
        return cmd_trial(args, cfg, spec)
    except ValidationError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ForecastCombineError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error[IO]: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
