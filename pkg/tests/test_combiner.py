import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecast_combine.combiner import (
    CombineError,
    Provenance,
    WeightVector,
    epoch_loss,
    forecast_implied_inference,
    naive_network_inference,
    network_inference,
    network_series,
    normalize_regrets,
    regret_from_forecast_loss,
    roll_forward,
    to_log_loss,
    update_ema_regret,
    weight_fn,
    weights_from_forecast,
    zscores,
)
from forecast_combine.core import TargetKind, TopicConfig, ValidationError

finite = st.floats(-50, 50, allow_nan=False)
vectors = st.lists(finite, min_size=1, max_size=12)

# 3 / (exp(2.25) + 1) and 3 / (exp(5.25) + 1), evaluated independently
GATE_AT_ZERO = 0.28604839469732846
GATE_AT_MINUS_ONE = 0.015660377080675192


def brute_weighted_mean(values, weights):
    num = math.fsum(w * v for v, w in zip(values, weights))
    return num / math.fsum(weights)


class TestLosses:
    @pytest.mark.parametrize("inf,truth,expected", [(1000, 1000, 0), (1003, 1000, 9), (997, 1000, 9)])
    def test_epoch_loss(self, inf, truth, expected):
        assert epoch_loss(inf, truth) == expected

    @pytest.mark.parametrize("loss,expected", [(1, 0.0), (100, 2.0), (9, 0.9542425094393249)])
    def test_log_loss_base10(self, loss, expected):
        assert to_log_loss(loss) == pytest.approx(expected, abs=1e-12)

    def test_natural_log(self):
        assert to_log_loss(math.e ** 2, log_base=math.e) == pytest.approx(2.0)

    def test_zero_loss_clamped_and_counted(self):
        d = {}
        out = to_log_loss(np.array([0.0, 1.0, 0.0]), diagnostics=d)
        np.testing.assert_allclose(out, [-12.0, 0.0, -12.0])
        assert d["floored"] == 2

    @pytest.mark.parametrize("net,fc,expected", [(1.0, 1.0, 0.0), (2.0, 1.0, 1.0), (1.0, 2.5, -1.5)])
    def test_regret_from_forecast_loss(self, net, fc, expected):
        assert regret_from_forecast_loss(net, fc) == expected


class TestNormalization:
    def test_zero_regrets(self):
        np.testing.assert_array_equal(normalize_regrets([0, 0, 0]), [0, 0, 0])

    def test_symmetric_pair(self):
        np.testing.assert_allclose(normalize_regrets([1, -1]), [1, -1], rtol=1e-7)

    def test_three_values(self):
        np.testing.assert_allclose(normalize_regrets([2, 0, -2]), [1.224744871391589, 0, -1.224744871391589],
                                   rtol=1e-7)

    def test_not_centred(self):
        out = normalize_regrets([3, 5])
        assert out[0] > 0 and out[1] > 0

    def test_absent_excluded(self):
        out = normalize_regrets([1, np.nan, -1])
        assert np.isnan(out[1])
        np.testing.assert_allclose(out[[0, 2]], [1, -1], rtol=1e-7)

    def test_zscores_examples(self):
        np.testing.assert_array_equal(zscores([5, 5, 5]), [0, 0, 0])
        np.testing.assert_allclose(zscores([2, 0, -2]), [1.224744871391589, 0, -1.224744871391589], rtol=1e-7)
        np.testing.assert_array_equal(zscores([4.0]), [0.0])

    @given(vectors, st.floats(-1e3, 1e3))
    def test_zscore_shift_invariance(self, r, shift):
        r = np.array(r)
        np.testing.assert_allclose(zscores(r + shift), zscores(r), rtol=0, atol=1e-12 * (1 + abs(shift)) * 1e3)

    @given(st.lists(finite, min_size=2, max_size=12))
    def test_zscore_moments(self, r):
        r = np.array(r)
        z = zscores(r)
        assert abs(z.mean()) < 1e-10
        sigma = r.std()
        if sigma > 1e-6:
            assert sigma / (sigma + 1e-8) - 1e-9 <= z.std() <= 1 + 1e-12


class TestWeightFn:
    def test_at_transition(self):
        assert weight_fn(0.75) == 1.5

    def test_at_zero(self):
        assert weight_fn(0.0) == pytest.approx(GATE_AT_ZERO, rel=1e-12)

    def test_saturation(self):
        assert weight_fn(0.75 + 100) > 2.999

    def test_monotone_grid(self):
        w = weight_fn(np.linspace(-5, 5, 10_000))
        assert np.all(np.diff(w) > 0)

    @given(st.floats(-8, 8), st.floats(-8, 8))
    def test_strictly_increasing(self, a, b):
        if abs(a - b) < 1e-6:
            return
        lo, hi = sorted((a, b))
        assert weight_fn(lo) < weight_fn(hi)
        assert 0 < weight_fn(lo) < 3


class TestWeightsFromForecast:
    def test_zscore(self, cfg):
        w = weights_from_forecast(TargetKind.ZSCORE, [0, 0], 0.0, cfg)
        assert w.provenance is Provenance.FROM_FORECAST
        np.testing.assert_allclose(w.weights, [GATE_AT_MINUS_ONE] * 2, rtol=1e-12)

    def test_regret(self, cfg):
        w = weights_from_forecast("REGRET", [0, 0], 0.0, cfg)
        np.testing.assert_allclose(w.weights, [GATE_AT_ZERO] * 2, rtol=1e-12)

    def test_loss_equal_to_network(self, cfg):
        w = weights_from_forecast(TargetKind.LOSS, [1.3, 1.3, 1.3], 1.3, cfg)
        assert np.ptp(w.weights) == 0

    def test_loss_lower_gets_more_weight(self, cfg):
        w = weights_from_forecast(TargetKind.LOSS, [0.5, 2.0], 1.0, cfg)
        assert w.weights[0] > w.weights[1]

    def test_unknown_kind(self, cfg):
        with pytest.raises(ValidationError):
            weights_from_forecast("RANK", [0.0], 0.0, cfg)

    @given(st.lists(finite, min_size=2, max_size=8), st.floats(-20, 20))
    @settings(max_examples=50)
    def test_zscore_weights_ignore_regret_shift(self, r, shift):
        cfg = TopicConfig()
        r = np.array(r)
        a = weights_from_forecast(TargetKind.ZSCORE, zscores(r), 0.0, cfg).weights
        b = weights_from_forecast(TargetKind.ZSCORE, zscores(r + shift), 0.0, cfg).weights
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_weight_vector_rejects_nonpositive(self):
        with pytest.raises(CombineError):
            WeightVector(np.array([1.0, 0.0]), Provenance.FROM_EMA)


class TestImpliedInference:
    @pytest.mark.parametrize("inf,w,expected", [([10, 20], [1, 1], 15), ([10, 20], [3, 1], 12.5), ([42], [0.3], 42)])
    def test_examples(self, inf, w, expected):
        assert forecast_implied_inference(inf, w) == expected

    def test_all_absent(self):
        with pytest.raises(CombineError):
            forecast_implied_inference([np.nan, np.nan], [1, 1])

    @given(st.lists(st.tuples(finite, st.floats(1e-3, 3)), min_size=1, max_size=12), st.floats(1e-3, 1e3))
    def test_brute_force_and_scaling(self, pairs, scale):
        v = np.array([p[0] for p in pairs])
        w = np.array([p[1] for p in pairs])
        got = forecast_implied_inference(v, w)
        ref = brute_weighted_mean(v, w)
        assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert forecast_implied_inference(v, w * scale) == pytest.approx(got, rel=1e-12, abs=1e-12)
        assert v.min() - 1e-9 <= got <= v.max() + 1e-9


class TestEma:
    def test_examples(self):
        assert update_ema_regret(0.0, 1.0, 0.1) == pytest.approx(0.1)
        assert update_ema_regret(1.0, 1.0, 0.37) == 1.0
        assert update_ema_regret(np.nan, -0.4, 0.1) == -0.4

    def test_absent_carries_forward(self):
        assert update_ema_regret(0.3, np.nan, 0.1) == 0.3

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 1), st.integers(1, 60))
    def test_geometric_convergence(self, ema0, r, alpha, n):
        ema = ema0
        for _ in range(n):
            ema = update_ema_regret(ema, r, alpha)
        assert abs(ema - r) <= (1 - alpha) ** n * abs(ema0 - r) + 1e-12


class TestNetworkInference:
    def test_equal_regrets_give_mean(self, cfg):
        assert network_inference([1, 2, 6], [3], [0.2] * 4, cfg) == pytest.approx(3.0)

    def test_single_contributor(self, cfg):
        assert network_inference([7.5], [], [0.1], cfg) == 7.5

    def test_monotone_in_gap(self, cfg):
        out = [network_inference([0, 2], [], [0.1, 0.1 + d], cfg) for d in (0.5, 1, 2)]
        assert all(1 < o <= 2 for o in out)
        assert out[0] < out[1] < out[2]
        plain = TopicConfig(normalize_ema_regrets=False)
        out = [network_inference([0, 2], [], [0.1, 0.1 + d], plain) for d in (0.5, 1, 2)]
        assert out[0] < out[1] < out[2] and out[0] > 1

    def test_brute_force(self, cfg, rng):
        raw, imp, ema = rng.normal(size=6), rng.normal(size=2), rng.normal(size=8)
        x = ema / (ema.std() + cfg.epsilon)
        w = [cfg.p / (math.exp(-cfg.p * (xi - cfg.c)) + 1) for xi in x]
        ref = brute_weighted_mean(np.concatenate([raw, imp]), w)
        assert network_inference(raw, imp, ema, cfg) == pytest.approx(ref, rel=1e-12)

    def test_empty(self, cfg):
        with pytest.raises(CombineError):
            network_inference([np.nan], [], [0.0], cfg)

    def test_naive_matches_network_bitwise(self, cfg, rng):
        for _ in range(50):
            raw, ema = rng.normal(size=5), rng.normal(size=5)
            assert naive_network_inference(raw, ema, cfg) == network_inference(raw, [], ema, cfg)


class TestRollForward:
    def test_regret_identity_and_shapes(self, cfg, rng):
        truth = 100 + rng.normal(size=40).cumsum()
        inf = truth[:, None] + rng.normal(scale=[0.5, 1, 2], size=(40, 3))
        s = roll_forward(truth, inf, cfg)
        np.testing.assert_allclose(s["regret"], s["network_log_loss"][:, None] - s["log_loss"], rtol=1e-12)
        np.testing.assert_allclose(s["network_loss"], (s["naive_inference"] - truth) ** 2)
        assert s["ema_regret"].shape == (40, 3)
        # first epoch: no history, plain mean
        assert s["naive_inference"][0] == pytest.approx(inf[0].mean())

    def test_better_worker_gains_weight(self, cfg, rng):
        truth = np.full(200, 10.0)
        inf = np.column_stack([truth + rng.normal(0, 0.01, 200), truth + rng.normal(0, 3, 200)])
        s = roll_forward(truth, inf, cfg)
        assert s["ema_regret"][-1, 0] > s["ema_regret"][-1, 1]
        late = np.abs(s["naive_inference"][100:] - truth[100:]).mean()
        assert late < np.abs(inf[100:].mean(axis=1) - truth[100:]).mean()

    def test_absent_worker(self, cfg):
        truth = np.array([1.0, 2.0, 3.0])
        inf = np.array([[1.1, np.nan], [2.2, 2.1], [np.nan, 3.1]])
        s = roll_forward(truth, inf, cfg)
        assert np.isnan(s["regret"][0, 1]) and np.isnan(s["regret"][2, 0])
        assert s["naive_inference"][0] == pytest.approx(1.1)
        assert s["naive_inference"][2] == pytest.approx(3.1)
        assert s["ema_regret"][2, 0] == s["ema_regret"][1, 0]

    def test_empty_epoch(self, cfg):
        with pytest.raises(CombineError):
            roll_forward(np.array([1.0]), np.array([[np.nan]]), cfg)

    def test_network_series_implied_joins_second_row(self, cfg, rng):
        truth = rng.normal(size=5)
        inf = truth[:, None] + rng.normal(size=(5, 3))
        ema = rng.normal(size=(5, 3))
        implied = inf.mean(axis=1)
        net_ll = rng.normal(size=5)
        out = network_series(inf, implied, truth, ema, net_ll, cfg)
        assert out[0] == naive_network_inference(inf[0], ema[0], cfg)
        first_regret = net_ll[0] - to_log_loss(epoch_loss(implied[0], truth[0]))
        assert out[1] == network_inference(inf[1], [implied[1]], np.append(ema[1], first_regret), cfg)
