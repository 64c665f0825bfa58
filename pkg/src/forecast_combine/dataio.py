"""CSV replay ingestion, scenario export, and the INI config format."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import enum
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import EpochPanel, MarketSeries, TopicConfig, ValidationError, config_hash, validate_config
from .synth import Scenario, contextual_scenario, periodic_scenario, sine_scenario

INFERENCE_HEADER = ("epoch", "worker_id", "inference")
TRUTH_HEADER = ("epoch", "truth")
MARKET_HEADER = ("epoch", "open", "high", "low", "close", "volume")
REWARDS_HEADER = ("epoch", "worker_id", "reward", "score")


def _rows(path, header: Sequence[str]):
    """Yield (line number, row) after checking the header; blank and ``#`` lines skipped."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise OSError(f"{path}: {e.strerror}") from e
    with fh:
        reader = csv.reader(fh)
        seen_header = False
        for row in reader:
            line = reader.line_num
            if not row or row[0].startswith("#"):
                continue
            if not seen_header:
                if tuple(c.strip() for c in row) != tuple(header):
                    raise ValidationError(f"{path}:{line}: expected header {','.join(header)}")
                seen_header = True
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            yield line, row
        if not seen_header:
            raise ValidationError(f"{path}: empty file")


def _int(s: str, where: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ValidationError(f"{where}: bad integer {s!r}") from None


def _float(s: str, where: str, blank_ok: bool = False) -> float:
    if blank_ok and s.strip() == "":
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise ValidationError(f"{where}: bad number {s!r}") from None


def _per_worker(path, header, value_cols: Sequence[int]):
    """Parse a long (epoch, worker_id, values...) file into epochs, workers and matrices."""
    cells: dict[tuple[int, str], list[float]] = {}
    epochs: list[int] = []
    workers: dict[str, int] = {}
    for line, row in _rows(path, header):
        where = f"{path}:{line}"
        e = _int(row[0], where)
        w = row[1].strip()
        if not w:
            raise ValidationError(f"{where}: empty worker_id")
        if epochs and e < epochs[-1]:
            raise ValidationError(f"{where}: epoch {e} out of order")
        if (e, w) in cells:
            raise ValidationError(f"{where}: duplicate row for epoch {e}, worker {w}")
        if not epochs or e != epochs[-1]:
            epochs.append(e)
        workers.setdefault(w, len(workers))
        cells[(e, w)] = [_float(row[k], where) for k in value_cols]
    pos = {e: i for i, e in enumerate(epochs)}
    mats = [np.full((len(epochs), len(workers)), np.nan) for _ in value_cols]
    for (e, w), vals in cells.items():
        for m, v in zip(mats, vals):
            m[pos[e], workers[w]] = v
    return np.array(epochs, dtype=np.int64), tuple(workers), mats


def _series(path, header, blank_ok=False) -> tuple[np.ndarray, np.ndarray]:
    epochs, vals = [], []
    for line, row in _rows(path, header):
        where = f"{path}:{line}"
        e = _int(row[0], where)
        if epochs and e <= epochs[-1]:
            raise ValidationError(f"{where}: epochs must be strictly increasing")
        epochs.append(e)
        vals.append([_float(v, where, blank_ok) for v in row[1:]])
    return np.array(epochs, dtype=np.int64), np.array(vals, dtype=float).reshape(len(epochs), -1)


def load_market(path) -> MarketSeries:
    epochs, v = _series(path, MARKET_HEADER, blank_ok=True)
    cols = {}
    for k, name in enumerate(MARKET_HEADER[1:]):
        col = v[:, k]
        cols[name] = None if np.isnan(col).all() else col
    if cols["close"] is None or np.isnan(cols["close"]).any():
        raise ValidationError(f"{path}: close column must be complete")
    return MarketSeries(epochs=epochs, **cols)


def load_replay(inference, truth, market=None, rewards=None, name: str = "replay") -> Scenario:
    """Build a replay scenario from CSV files; raises ValidationError with file:line context."""
    epochs, workers, (inf,) = _per_worker(inference, INFERENCE_HEADER, (2,))
    t_epochs, t_vals = _series(truth, TRUTH_HEADER)
    t_pos = {int(e): i for i, e in enumerate(t_epochs)}
    missing = [int(e) for e in epochs if int(e) not in t_pos]
    if missing:
        raise ValidationError(f"{truth}: no truth for epoch {missing[0]}")
    extra = sorted(set(t_pos) - set(int(e) for e in epochs))
    if extra:
        raise ValidationError(f"{truth}: truth epoch {extra[0]} has no inferences")
    truth_v = t_vals[[t_pos[int(e)] for e in epochs], 0]
    n, w = inf.shape
    nan_m, nan_v = np.full((n, w), np.nan), np.full(n, np.nan)
    panel = EpochPanel(epochs, workers, truth_v, inf, nan_m, nan_m, nan_m, nan_v, nan_v, nan_m)
    mkt = None
    if market is not None:
        mkt = load_market(market)
        lacking = np.setdiff1d(epochs, mkt.epochs)
        if lacking.size:
            raise ValidationError(f"{market}: no market row for epoch {int(lacking[0])}")
    extras = None
    if rewards is not None:
        r_epochs, r_workers, (reward, score) = _per_worker(rewards, REWARDS_HEADER, (2, 3))
        extras = {}
        for key, m in (("reward", reward), ("score", score)):
            full = np.full((n, w), np.nan)
            rows = np.searchsorted(epochs, r_epochs)
            ok = (rows < n) & (epochs[np.minimum(rows, n - 1)] == r_epochs)
            for k, wid in enumerate(r_workers):
                if wid not in workers:
                    raise ValidationError(f"{rewards}: unknown worker {wid}")
                full[rows[ok], workers.index(wid)] = m[ok, k]
            extras[key] = full
    return Scenario(name, panel, mkt, None, workers, extras)


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def export_scenario(scenario: Scenario, out_dir) -> dict[str, Path]:
    """Write a truth-based scenario in the replay CSV schema; returns the written paths."""
    panel = scenario.panel
    if not panel.has_truth:
        raise ValidationError("only truth-based scenarios can be exported for replay")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"inference": out / "inferences.csv", "truth": out / "truth.csv"}
    with open(paths["inference"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INFERENCE_HEADER)
        for i, e in enumerate(panel.epochs):
            for j, wid in enumerate(panel.worker_ids):
                if np.isfinite(panel.inference[i, j]):
                    w.writerow([int(e), wid, _fmt(panel.inference[i, j])])
    with open(paths["truth"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for e, t in zip(panel.epochs, panel.truth):
            w.writerow([int(e), _fmt(t)])
    m = scenario.market
    if m is not None:
        paths["market"] = out / "market.csv"
        with open(paths["market"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MARKET_HEADER)
            for i, e in enumerate(m.epochs):
                w.writerow([int(e)] + [_fmt(None if getattr(m, c) is None else getattr(m, c)[i])
                                       for c in MARKET_HEADER[1:]])
    return paths


# ---- config files -------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """The ``[scenario]`` block: which benchmark (or replay files) to run."""

    kind: str = "contextual"
    n_epochs: Optional[int] = None
    sigma: float = 0.01
    factor_scale: float = 1.0
    n_random: int = 8
    inference: Optional[str] = None
    truth: Optional[str] = None
    market: Optional[str] = None
    rewards: Optional[str] = None

    KINDS = ("sine", "periodic", "contextual", "replay")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"scenario kind must be one of {', '.join(self.KINDS)}")
        if self.kind == "replay" and not (self.inference and self.truth):
            raise ValidationError("replay scenario needs inference and truth paths")
        if self.n_epochs is not None and self.n_epochs < 1:
            raise ValidationError("n_epochs must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def make_scenario(spec: ScenarioSpec, seed: int, cfg: TopicConfig) -> Scenario:
    """Instantiate the scenario for one trial seed (replay ignores the seed)."""
    n = spec.n_epochs or cfg.n_train + cfg.n_test
    if spec.kind == "sine":
        return sine_scenario(n, seed, n_random=spec.n_random)
    if spec.kind == "periodic":
        return periodic_scenario(n, seed, n_random=spec.n_random)
    if spec.kind == "contextual":
        return contextual_scenario(n, seed, spec.sigma, spec.factor_scale)
    return load_replay(spec.inference, spec.truth, spec.market, spec.rewards)


def _parse_value(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "spans":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if kind == "optional_spans":
            return None if raw in ("", "none", "None") else tuple(int(s) for s in raw.split(","))
        if kind == "optional_str":
            return raw or None
        if kind == "optional_int":
            return None if raw in ("", "none", "None") else int(raw)
        if isinstance(kind, type) and issubclass(kind, enum.Enum):
            return kind(raw.upper())
        return raw
    except ValueError:
        raise ValidationError(f"config key {key}: cannot parse {raw!r}") from None


def _kinds(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        d = f.default
        if f.name == "span_set":
            out[f.name] = "spans"
        elif f.name == "adaptive_spans":
            out[f.name] = "optional_spans"
        elif f.name == "n_epochs":
            out[f.name] = "optional_int"
        elif d is None:
            out[f.name] = "optional_str"
        elif isinstance(d, enum.Enum):
            out[f.name] = type(d)
        else:
            out[f.name] = type(d)
    return out


def _dump_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_config(path=None, text: Optional[str] = None) -> tuple[TopicConfig, ScenarioSpec]:
    """Read ``[topic]`` and ``[scenario]`` sections; unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
    except configparser.Error as e:
        raise ValidationError(f"config parse error: {e}") from None
    unknown = set(cp.sections()) - {"topic", "scenario"}
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    out = []
    for section, cls in (("topic", TopicConfig), ("scenario", ScenarioSpec)):
        kinds = _kinds(cls)
        vals = {}
        if cp.has_section(section):
            for key, raw in cp.items(section):
                if key not in kinds:
                    raise ValidationError(f"unknown {section} key: {key}")
                vals[key] = _parse_value(kinds[key], raw, key)
        try:
            out.append(cls(**vals))
        except (TypeError, ValueError) as e:
            raise ValidationError(str(e)) from None
    validate_config(out[0])
    return out[0], out[1]


def dump_config(cfg: TopicConfig, spec: ScenarioSpec = ScenarioSpec()) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, obj in (("topic", cfg), ("scenario", spec)):
        cp[section] = {f.name: _dump_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def run_hash(cfg: TopicConfig, spec: ScenarioSpec, extra: Optional[dict] = None) -> str:
    """Config hash stamped on every output file (seed excluded)."""
    key = {"scenario": spec.to_dict()}
    if extra:
        key.update(extra)
    return config_hash(cfg, key)


def stamp(h: str, seed) -> str:
    return f"config_hash={h},seed={seed}"


def read_stamp(path) -> dict[str, str]:
    """Parse the leading ``# config_hash=...,seed=...`` line of an output CSV."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first.startswith("#"):
        raise ValidationError(f"{path}: missing config stamp line")
    out = {}
    for part in first[1:].strip().split(","):
        k, _, v = part.partition("=")
        out[k.strip()] = v.strip()
    if "config_hash" not in out:
        raise ValidationError(f"{path}: missing config hash")
    return out


def json_dumps(obj) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, enum.Enum):
            return o.value
        raise TypeError(type(o).__name__)
    return json.dumps(obj, indent=1, sort_keys=True, default=default)
