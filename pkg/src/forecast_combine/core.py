"""Shared domain types, configuration and error classes."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ForecastCombineError(Exception):
    """Base class; ``code`` is the machine-readable error category."""

    code = "RUNTIME"


class ValidationError(ForecastCombineError, ValueError):
    code = "VALIDATION"


class CombineError(ForecastCombineError):
    code = "COMBINE"


class FeatureError(ForecastCombineError):
    code = "FEATURE"


class LearnError(ForecastCombineError):
    code = "LEARN"


class EvalError(ForecastCombineError):
    code = "EVAL"


class TargetKind(str, enum.Enum):
    LOSS = "LOSS"
    REGRET = "REGRET"
    ZSCORE = "ZSCORE"


class Structure(str, enum.Enum):
    GLOBAL = "GLOBAL"
    PER_INFERER = "PER_INFERER"


class WorkerKind(str, enum.Enum):
    INFERER = "INFERER"
    FORECASTER = "FORECASTER"


@dataclass(frozen=True)
class WorkerId:
    id: str
    kind: WorkerKind = WorkerKind.INFERER


@dataclass(frozen=True)
class TopicConfig:
    """All constants of one topic.

    ``p``/``c`` shape the sigmoid weight gate, ``alpha`` is the EMA factor for
    historical regrets, ``delta_z`` offsets forecasted z-scores before gating.
    Logs are taken in ``log_base`` throughout.
    """

    p: float = 3.0
    c: float = 0.75
    alpha: float = 0.1
    epsilon: float = 1e-8
    delta_z: float = -1.0
    n_train: int = 1000
    n_test: int = 100
    span_set: tuple[int, ...] = (3, 14)
    adaptive_spans: Optional[tuple[int, int, int]] = None
    target_kind: TargetKind = TargetKind.ZSCORE
    structure: Structure = Structure.PER_INFERER
    log_base: float = 10.0
    seed: int = 0
    normalize_ema_regrets: bool = True
    loss_floor: float = 1e-12
    use_lags: bool = True
    max_lag: int = 60
    lag_confidence: float = 0.99
    min_train_rows: int = 50
    tune_budget: int = 0

    def __post_init__(self):
        # normalise list inputs and enum strings so equality is field-wise
        object.__setattr__(self, "span_set", tuple(int(s) for s in self.span_set))
        if self.adaptive_spans is not None:
            object.__setattr__(
                self, "adaptive_spans", tuple(int(s) for s in self.adaptive_spans)
            )
        object.__setattr__(self, "target_kind", _enum(TargetKind, self.target_kind))
        object.__setattr__(self, "structure", _enum(Structure, self.structure))

    @property
    def max_span(self) -> int:
        spans = list(self.span_set)
        if self.adaptive_spans is not None:
            spans += list(self.adaptive_spans)
        return max(spans)

    def replace(self, **changes) -> "TopicConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TopicConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _enum(kind, value):
    try:
        return kind(value)
    except ValueError:
        raise ValidationError(f"unknown {kind.__name__}: {value!r}") from None


def validate_config(cfg: TopicConfig) -> TopicConfig:
    """Return ``cfg`` unchanged, or raise ValidationError on the first broken invariant."""
    if not (cfg.p > 0 and math.isfinite(cfg.p)):
        raise ValidationError("p must be positive")
    if not math.isfinite(cfg.c):
        raise ValidationError("c must be finite")
    if not (0 < cfg.alpha <= 1):
        raise ValidationError("alpha out of range (0, 1]")
    if not cfg.epsilon > 0:
        raise ValidationError("epsilon must be positive")
    if not math.isfinite(cfg.delta_z):
        raise ValidationError("delta_z must be finite")
    if len(cfg.span_set) == 0:
        raise ValidationError("span_set is empty")
    if any(s < 2 for s in cfg.span_set):
        raise ValidationError("spans must be >= 2")
    if any(b <= a for a, b in zip(cfg.span_set, cfg.span_set[1:])):
        raise ValidationError("spans not increasing")
    if cfg.adaptive_spans is not None:
        if len(cfg.adaptive_spans) != 3:
            raise ValidationError("adaptive_spans needs [gradient, rolling, ema]")
        if any(s < 2 for s in cfg.adaptive_spans):
            raise ValidationError("adaptive spans must be >= 2")
    if cfg.n_test < 1:
        raise ValidationError("n_test must be >= 1")
    max_lag = cfg.max_lag if cfg.use_lags else 0
    if cfg.n_train < cfg.max_span + max_lag:
        raise ValidationError("n_train shorter than max span + max lag")
    if cfg.log_base not in (10.0, math.e):
        raise ValidationError("log_base must be e or 10")
    if not (0 < cfg.lag_confidence < 1):
        raise ValidationError("lag_confidence out of range (0, 1)")
    if not cfg.loss_floor > 0:
        raise ValidationError("loss_floor must be positive")
    if cfg.min_train_rows < 1:
        raise ValidationError("min_train_rows must be >= 1")
    if cfg.tune_budget < 0:
        raise ValidationError("tune_budget must be >= 0")
    if not (0 <= cfg.seed < 2**64):
        raise ValidationError("seed must be a 64-bit unsigned integer")
    return cfg


def _frozen(a) -> Optional[np.ndarray]:
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EpochPanel:
    """Per-epoch ledger of a topic.  NaN marks an absent cell.

    Matrices are ``(n_epochs, n_workers)``.  ``ema_regret[i]`` is the EMA after
    folding in epoch ``i``'s regret, i.e. what epoch ``i + 1`` weights with.
    """

    epochs: np.ndarray
    worker_ids: tuple[str, ...]
    truth: np.ndarray
    inference: np.ndarray
    loss: np.ndarray
    log_loss: np.ndarray
    regret: np.ndarray
    network_loss: np.ndarray
    network_log_loss: np.ndarray
    ema_regret: np.ndarray
    naive_inference: Optional[np.ndarray] = None

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.int64).copy()
        epochs.setflags(write=False)
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "worker_ids", tuple(self.worker_ids))
        for name in ("truth", "inference", "loss", "log_loss", "regret",
                     "network_loss", "network_log_loss", "ema_regret",
                     "naive_inference"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n, w = len(epochs), len(self.worker_ids)
        for name in ("inference", "loss", "log_loss", "regret", "ema_regret"):
            if getattr(self, name).shape != (n, w):
                raise ValidationError(f"panel.{name} must have shape {(n, w)}")
        if np.any(np.diff(epochs) <= 0):
            raise ValidationError("panel epochs must be strictly increasing")

    @property
    def n_epochs(self) -> int:
        return len(self.epochs)

    @property
    def n_workers(self) -> int:
        return len(self.worker_ids)

    @property
    def has_truth(self) -> bool:
        return bool(np.isfinite(self.truth).any())

    def present(self) -> np.ndarray:
        """Boolean mask of filled (epoch, worker) cells."""
        if self.has_truth:
            return np.isfinite(self.inference)
        return np.isfinite(self.regret)

    @classmethod
    def from_regrets(cls, regrets, worker_ids: Sequence[str], epochs=None) -> "EpochPanel":
        """Panel for benchmarks that supply regrets directly (no truth layer)."""
        regrets = np.asarray(regrets, dtype=float)
        n, w = regrets.shape
        nan_m = np.full((n, w), np.nan)
        nan_v = np.full(n, np.nan)
        return cls(
            epochs=np.arange(n) if epochs is None else epochs,
            worker_ids=tuple(worker_ids),
            truth=nan_v,
            inference=nan_m,
            loss=nan_m,
            log_loss=nan_m,
            regret=regrets,
            network_loss=nan_v,
            network_log_loss=nan_v,
            ema_regret=nan_m,
        )


@dataclass(frozen=True)
class ForecastPanel:
    """One forecaster's per-epoch output over a window of epochs."""

    epochs: np.ndarray
    predicted_target: np.ndarray
    weights: np.ndarray
    implied: np.ndarray
    target_kind: TargetKind = TargetKind.ZSCORE


@dataclass(frozen=True)
class MarketSeries:
    close: np.ndarray
    open: Optional[np.ndarray] = None
    high: Optional[np.ndarray] = None
    low: Optional[np.ndarray] = None
    volume: Optional[np.ndarray] = None
    epochs: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        for name in ("close", "open", "high", "low", "volume"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.epochs is None:
            object.__setattr__(self, "epochs", np.arange(len(self.close)))
        n = len(self.close)
        for name in ("open", "high", "low", "volume"):
            a = getattr(self, name)
            if a is not None and len(a) != n:
                raise ValidationError(f"market.{name} length differs from close")
        with np.errstate(invalid="ignore"):
            if self.high is not None:
                ref = self.close if self.open is None else np.fmax(self.open, self.close)
                if np.any(self.high < ref):
                    raise ValidationError("market high below max(open, close)")
            if self.low is not None:
                ref = self.close if self.open is None else np.fmin(self.open, self.close)
                if np.any(self.low > ref):
                    raise ValidationError("market low above min(open, close)")
            if self.volume is not None and np.any(self.volume < 0):
                raise ValidationError("market volume negative")

    def __len__(self) -> int:
        return len(self.close)


def config_hash(cfg: TopicConfig, extra: Optional[dict] = None) -> str:
    """Short digest of the effective config (seed excluded) plus optional scenario keys."""
    d = cfg.to_dict()
    d.pop("seed")
    if extra:
        d["__extra__"] = extra
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def derive_seed(seed: int, key: str) -> int:
    """Stable 63-bit child seed for a named stream; independent of call order."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(key.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def stream(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, key))
