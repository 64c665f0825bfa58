import math

import numpy as np
import pytest

from forecast_combine.core import (
    EpochPanel,
    MarketSeries,
    Structure,
    TargetKind,
    TopicConfig,
    ValidationError,
    config_hash,
    derive_seed,
    stream,
    validate_config,
)


class TestValidateConfig:
    def test_defaults_are_valid(self):
        cfg = TopicConfig()
        assert validate_config(cfg) is cfg
        assert (cfg.p, cfg.c, cfg.alpha, cfg.delta_z, cfg.span_set) == (3.0, 0.75, 0.1, -1.0, (3, 14))

    def test_alpha_zero_rejected(self):
        with pytest.raises(ValidationError, match="alpha out of range"):
            validate_config(TopicConfig(alpha=0))

    def test_alpha_one_allowed(self):
        validate_config(TopicConfig(alpha=1.0))

    def test_spans_must_increase(self):
        with pytest.raises(ValidationError, match="spans not increasing"):
            validate_config(TopicConfig(span_set=(14, 3)))

    @pytest.mark.parametrize("changes", [
        {"p": 0}, {"epsilon": 0}, {"span_set": ()}, {"span_set": (1, 3)},
        {"log_base": 2.0}, {"n_test": 0}, {"adaptive_spans": (3, 7)},
        {"n_train": 50}, {"lag_confidence": 1.0},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ValidationError):
            validate_config(TopicConfig(**changes))

    def test_n_train_must_cover_span_and_lag(self):
        validate_config(TopicConfig(n_train=74, span_set=(3, 14), max_lag=60))
        with pytest.raises(ValidationError):
            validate_config(TopicConfig(n_train=73, span_set=(3, 14), max_lag=60))
        validate_config(TopicConfig(n_train=20, use_lags=False))

    def test_natural_log_base(self):
        validate_config(TopicConfig(log_base=math.e))

    def test_validation_error_is_value_error(self):
        assert issubclass(ValidationError, ValueError)
        assert ValidationError.code == "VALIDATION"


class TestTopicConfig:
    def test_enum_strings_normalised(self):
        cfg = TopicConfig(target_kind="REGRET", structure="GLOBAL", span_set=[3, 7])
        assert cfg.target_kind is TargetKind.REGRET
        assert cfg.structure is Structure.GLOBAL
        assert cfg.span_set == (3, 7)

    def test_dict_round_trip(self):
        cfg = TopicConfig(adaptive_spans=(3, 7, 14), seed=9, target_kind=TargetKind.LOSS)
        assert TopicConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValidationError, match="unknown"):
            TopicConfig.from_dict({"gamma": 1})

    def test_max_span_includes_adaptive(self):
        assert TopicConfig(span_set=(3,), adaptive_spans=(3, 40, 5)).max_span == 40

    def test_hash_ignores_seed(self):
        assert config_hash(TopicConfig(seed=1)) == config_hash(TopicConfig(seed=2))
        assert config_hash(TopicConfig()) != config_hash(TopicConfig(alpha=0.2))


class TestEpochPanel:
    def test_from_regrets(self):
        r = np.arange(6.0).reshape(3, 2)
        panel = EpochPanel.from_regrets(r, ["a", "b"])
        assert panel.n_epochs == 3 and panel.n_workers == 2
        assert not panel.has_truth
        np.testing.assert_array_equal(panel.regret, r)

    def test_arrays_read_only(self):
        panel = EpochPanel.from_regrets(np.zeros((2, 2)), ["a", "b"])
        with pytest.raises(ValueError):
            panel.regret[0, 0] = 1.0


class TestMarketSeries:
    def test_close_only(self):
        m = MarketSeries(close=[1.0, 2.0])
        assert len(m) == 2
        np.testing.assert_array_equal(m.epochs, [0, 1])

    def test_high_below_close(self):
        with pytest.raises(ValidationError, match="high"):
            MarketSeries(close=[2.0], high=[1.0])

    def test_low_above_open(self):
        with pytest.raises(ValidationError, match="low"):
            MarketSeries(close=[2.0], open=[1.0], low=[1.5])

    def test_negative_volume(self):
        with pytest.raises(ValidationError, match="volume"):
            MarketSeries(close=[2.0], volume=[-1.0])


class TestSeeds:
    def test_stable(self):
        assert derive_seed(7, "allo0") == derive_seed(7, "allo0")
        assert derive_seed(7, "allo0") != derive_seed(7, "allo1")
        assert derive_seed(7, "allo0") != derive_seed(8, "allo0")

    def test_streams_independent_of_order(self):
        a1 = stream(3, "a").random(4)
        stream(3, "b").random(100)
        np.testing.assert_array_equal(a1, stream(3, "a").random(4))
