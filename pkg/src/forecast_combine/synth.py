"""Seeded generators for the synthetic benchmarks.

Every worker draws from its own stream derived from (seed, worker id), so a
worker's draws do not depend on how many other workers exist or in which
order they are generated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import EpochPanel, MarketSeries, stream


@dataclass(frozen=True)
class SineSpec:
    amplitude: float = 1.0
    period: float = 10.0
    noise_half_width: float = 1.0

    def __post_init__(self):
        if self.period < 2 or self.amplitude <= 0:
            raise ValueError("SineSpec needs period >= 2 and amplitude > 0")


class Regime(str, enum.Enum):
    DOWN = "DOWN"
    NONE = "NONE"
    UP = "UP"


class Archetype(str, enum.Enum):
    SPECIALIST_DOWN = "SPECIALIST_DOWN"
    SPECIALIST_UP = "SPECIALIST_UP"
    SPECIALIST_NONE = "SPECIALIST_NONE"
    RANDOM = "RANDOM"
    EMA_FOLLOWER = "EMA_FOLLOWER"


@dataclass(frozen=True)
class DriftRegime:
    """Per-epoch drift and label, plus the sampled segments (label, length)."""

    drift: np.ndarray
    labels: tuple[Regime, ...]
    segments: tuple[tuple[Regime, int], ...]


@dataclass(frozen=True)
class InfererSpec:
    name: str
    archetype: Archetype
    factor_range: tuple[float, float]
    accurate_factor_range: Optional[tuple[float, float]] = None
    ema_span: Optional[int] = None


SPECIALIST_REGIME = {
    Archetype.SPECIALIST_DOWN: Regime.DOWN,
    Archetype.SPECIALIST_UP: Regime.UP,
    Archetype.SPECIALIST_NONE: Regime.NONE,
}


def default_inferers() -> list[InfererSpec]:
    specs = [
        InfererSpec("allo0", Archetype.SPECIALIST_DOWN, (0.5, 1.0), (0.1, 0.3)),
        InfererSpec("allo1", Archetype.SPECIALIST_UP, (0.5, 1.0), (0.1, 0.3)),
        InfererSpec("allo2", Archetype.SPECIALIST_NONE, (0.5, 1.0), (0.1, 0.3)),
    ]
    specs += [InfererSpec(f"allo{k}", Archetype.RANDOM, (0.2, 1.2)) for k in range(3, 7)]
    specs += [InfererSpec(f"allo{7 + k}", Archetype.EMA_FOLLOWER, (0.5, 1.0), ema_span=s)
              for k, s in enumerate((5, 7, 9))]
    return specs


@dataclass(frozen=True)
class Scenario:
    """A benchmark or replay input.

    ``panel`` always holds the raw inputs; for truth-based scenarios its
    derived columns (losses, regrets) are filled in by the trial runner.
    """

    name: str
    panel: EpochPanel
    market: Optional[MarketSeries] = None
    regime: Optional[DriftRegime] = None
    eval_workers: tuple[str, ...] = ()
    extras: Optional[dict[str, np.ndarray]] = None


def _uniform(rng, half_width, size):
    if half_width == 0:
        return np.zeros(size)
    return rng.uniform(-half_width, half_width, size)


def gen_sinusoidal(n_epochs: int, specs: Sequence[SineSpec] = (SineSpec(1, 10), SineSpec(1.5, 17)),
                   n_random: int = 8, seed: int = 0, random_half_width: float = 1.0) -> EpochPanel:
    """Regrets: sine outperformers plus uniform-noise controls."""
    if n_epochs < 1:
        raise ValueError("n_epochs must be >= 1")
    i = np.arange(n_epochs)
    cols, names = [], []
    for k, sp in enumerate(specs):
        name = f"allo{k}"
        noise = _uniform(stream(seed, name), sp.noise_half_width, n_epochs)
        cols.append(sp.amplitude * np.sin(2 * np.pi * i / sp.period) + noise)
        names.append(name)
    for k in range(n_random):
        name = f"allo{len(specs) + k}"
        cols.append(_uniform(stream(seed, name), random_half_width, n_epochs))
        names.append(name)
    return EpochPanel.from_regrets(np.column_stack(cols), names)


def gen_fixed_interval(n_epochs: int, spike: tuple[float, int] = (1.0, 10),
                       base_half_width: float = 0.5, seed: int = 0,
                       name: str = "allo0") -> np.ndarray:
    """One worker's regrets: ``height`` at multiples of ``period``, uniform noise elsewhere."""
    height, period = spike
    if period < 2:
        raise ValueError("period must be >= 2")
    out = _uniform(stream(seed, name), base_half_width, n_epochs)
    out[np.arange(n_epochs) % period == 0] = height
    return out


def periodic_panel(n_epochs: int, seed: int = 0, n_random: int = 8,
                   spikes: Sequence[tuple[float, int]] = ((1.0, 10),),
                   base_half_width: float = 0.5) -> EpochPanel:
    """Fixed-interval outperformers plus uniform-noise controls."""
    cols, names = [], []
    for k, sp in enumerate(spikes):
        names.append(f"allo{k}")
        cols.append(gen_fixed_interval(n_epochs, sp, base_half_width, seed, names[-1]))
    for k in range(n_random):
        names.append(f"allo{len(spikes) + k}")
        cols.append(_uniform(stream(seed, names[-1]), base_half_width, n_epochs))
    return EpochPanel.from_regrets(np.column_stack(cols), names)


def _label(drift: float) -> Regime:
    return Regime.DOWN if drift < 0 else Regime.UP if drift > 0 else Regime.NONE


def gen_regimes(n_epochs: int, drift_values=(-0.01, 0.0, 0.01), mean_len: float = 5.0,
                none_weight: float = 3.0, rng: Optional[np.random.Generator] = None,
                allow_repeat: bool = True) -> DriftRegime:
    """Drift segments with Poisson lengths (at least 1); zero drift is ``none_weight`` x likelier."""
    rng = np.random.default_rng(0) if rng is None else rng
    values = np.asarray(drift_values, dtype=float)
    w = np.where(values == 0, none_weight, 1.0)
    prob = w / w.sum()
    drift = np.empty(n_epochs)
    segments = []
    t, prev = 0, -1
    while t < n_epochs:
        k = int(rng.choice(len(values), p=prob))
        if not allow_repeat and len(values) > 1:
            while k == prev:
                k = int(rng.choice(len(values), p=prob))
        length = max(1, int(rng.poisson(mean_len)))
        drift[t:t + length] = values[k]
        segments.append((_label(values[k]), length))
        t += length
        prev = k
    return DriftRegime(drift, tuple(_label(d) for d in drift), tuple(segments))


def gen_gbm_truth(n_epochs: int, init: float = 1000.0, sigma: float = 0.01,
                  drift_values=(-0.01, 0.0, 0.01), mean_len: float = 5.0,
                  none_weight: float = 3.0, seed: int = 0,
                  allow_repeat: bool = True) -> tuple[np.ndarray, DriftRegime]:
    """GBM prices with regime-switching drift.

    prices[0] = init; the log return from t-1 to t is drift[t] + sigma * N(0, 1).
    """
    if n_epochs < 1:
        raise ValueError("n_epochs must be >= 1")
    rng = stream(seed, "truth")
    regime = gen_regimes(n_epochs, drift_values, mean_len, none_weight, rng, allow_repeat)
    shocks = rng.standard_normal(n_epochs)
    ret = regime.drift + sigma * shocks
    ret[0] = 0.0
    prices = init * np.exp(np.cumsum(ret))
    prices[0] = init
    return prices, regime


def _ema(x: np.ndarray, span: int) -> np.ndarray:
    a = 2.0 / (span + 1.0)
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, len(x)):
        out[t] = a * x[t] + (1 - a) * out[t - 1]
    return out


def gen_contextual_inferers(prices: np.ndarray, regime: DriftRegime, seed: int = 0,
                            sigma: float = 0.01, specs: Optional[Sequence[InfererSpec]] = None,
                            factor_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Inferences for epochs 1..n-1 of ``prices``.

    Returns (log_returns, price_inferences, names); both arrays are
    (n - 1, workers).  Row t - 1 predicts prices[t] from prices[t - 1].
    Noise factors are drawn once per worker; ``factor_scale`` multiplies them.
    """
    specs = default_inferers() if specs is None else list(specs)
    prices = np.asarray(prices, dtype=float)
    true_ret = np.diff(np.log(prices))
    n = len(true_ret)
    labels = np.array([r.value for r in regime.labels[1:]])
    base = prices[:-1]
    out = np.empty((n, len(specs)))
    for k, sp in enumerate(specs):
        rng = stream(seed, sp.name)
        f = rng.uniform(*sp.factor_range) * factor_scale
        if sp.archetype in SPECIALIST_REGIME:
            f_acc = rng.uniform(*sp.accurate_factor_range) * factor_scale
            z = rng.standard_normal(n)
            on = labels == SPECIALIST_REGIME[sp.archetype].value
            out[:, k] = np.where(on, true_ret + f_acc * sigma * z, f * sigma * z)
        elif sp.archetype is Archetype.RANDOM:
            out[:, k] = f * sigma * rng.standard_normal(n)
        else:
            ema = _ema(prices, sp.ema_span)[:-1]
            out[:, k] = np.log(ema / base) + f * sigma * rng.standard_normal(n)
    return out, base[:, None] * np.exp(out), [sp.name for sp in specs]


def contextual_scenario(n_epochs: int = 1100, seed: int = 0, sigma: float = 0.01,
                        factor_scale: float = 1.0, **truth_kw) -> Scenario:
    """GBM truth with three specialists, four random and three EMA-following inferers.

    Panel epoch e has truth prices[e + 1] and inferences built on prices[e].
    """
    prices, regime = gen_gbm_truth(n_epochs + 1, sigma=sigma, seed=seed, **truth_kw)
    _, inference, names = gen_contextual_inferers(prices, regime, seed, sigma,
                                                  factor_scale=factor_scale)
    truth = prices[1:]
    nan_m = np.full(inference.shape, np.nan)
    nan_v = np.full(n_epochs, np.nan)
    panel = EpochPanel(np.arange(n_epochs), names, truth, inference, nan_m, nan_m, nan_m,
                       nan_v, nan_v, nan_m)
    shifted = DriftRegime(regime.drift[1:], regime.labels[1:], regime.segments)
    return Scenario("contextual", panel, MarketSeries(close=truth), shifted, tuple(names))


def sine_scenario(n_epochs: int = 1100, seed: int = 0,
                  specs: Sequence[SineSpec] = (SineSpec(1, 10), SineSpec(1.5, 17)),
                  n_random: int = 8) -> Scenario:
    panel = gen_sinusoidal(n_epochs, specs, n_random, seed)
    return Scenario("sine", panel, eval_workers=panel.worker_ids[: len(specs)])


def periodic_scenario(n_epochs: int = 1100, seed: int = 0,
                      spikes: Sequence[tuple[float, int]] = ((1.0, 10),),
                      n_random: int = 8, base_half_width: float = 0.5) -> Scenario:
    panel = periodic_panel(n_epochs, seed, n_random, spikes, base_half_width)
    return Scenario("periodic", panel, eval_workers=panel.worker_ids[: len(spikes)])
