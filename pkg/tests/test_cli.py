from pathlib import Path

import numpy as np
import pytest

from forecast_combine.cli import TRIAL_COLUMNS, main
from forecast_combine.core import TopicConfig, ValidationError
from forecast_combine.dataio import (
    ScenarioSpec,
    dump_config,
    export_scenario,
    load_config,
    load_replay,
    read_stamp,
)
from forecast_combine.evaluation import run_trial
from forecast_combine.synth import SineSpec, contextual_scenario, sine_scenario

SMALL_INI = """
[topic]
n_train = 300
n_test = 40
max_lag = 20

[scenario]
kind = contextual
"""


def write(path: Path, text: str) -> Path:
    path.write_text(text.lstrip())
    return path


@pytest.fixture
def small_ini(tmp_path):
    return write(tmp_path / "small.ini", SMALL_INI)


@pytest.fixture
def replay_files(tmp_path):
    inf = write(tmp_path / "inf.csv", """
epoch,worker_id,inference
0,a,1.0
0,b,2.0
1,a,1.5
1,b,2.5
""")
    truth = write(tmp_path / "truth.csv", "epoch,truth\n0,1.2\n1,2.0\n")
    return inf, truth


class TestConfigFile:
    def test_round_trip(self):
        cfg = TopicConfig(n_train=321, span_set=(3, 30), target_kind="LOSS", structure="GLOBAL",
                          alpha=0.2, seed=9)
        spec = ScenarioSpec(kind="sine", n_epochs=500, n_random=4)
        text = dump_config(cfg, spec)
        cfg2, spec2 = load_config(text=text)
        assert cfg2 == cfg and spec2 == spec
        assert dump_config(cfg2, spec2) == text

    def test_defaults_when_empty(self):
        assert load_config(text="") == (TopicConfig(), ScenarioSpec())

    @pytest.mark.parametrize("text", [
        "[topic]\nbogus = 1\n",
        "[extra]\nx = 1\n",
        "[topic]\nn_train = many\n",
        "[scenario]\nkind = moon\n",
        "[scenario]\nkind = replay\n",
        "[topic]\np = -1\n",
    ])
    def test_rejects(self, text):
        with pytest.raises(ValidationError):
            load_config(text=text)


class TestReplayLoading:
    def test_minimal(self, replay_files):
        sc = load_replay(*replay_files)
        assert sc.panel.n_epochs == 2 and sc.panel.worker_ids == ("a", "b")
        assert np.array_equal(sc.panel.inference, [[1.0, 2.0], [1.5, 2.5]])
        assert sc.market is None

    def test_missing_truth_epoch(self, tmp_path, replay_files):
        truth = write(tmp_path / "t2.csv", "epoch,truth\n0,1.2\n")
        with pytest.raises(ValidationError, match="epoch 1"):
            load_replay(replay_files[0], truth)

    def test_duplicate_row(self, tmp_path, replay_files):
        inf = write(tmp_path / "dup.csv", "epoch,worker_id,inference\n0,a,1\n0,a,2\n")
        with pytest.raises(ValidationError, match="dup.csv:3"):
            load_replay(inf, replay_files[1])

    def test_bad_number_line(self, tmp_path, replay_files):
        inf = write(tmp_path / "bad.csv", "epoch,worker_id,inference\n0,a,1\n0,b,x\n")
        with pytest.raises(ValidationError, match="bad.csv:3"):
            load_replay(inf, replay_files[1])

    def test_wrong_header(self, tmp_path, replay_files):
        inf = write(tmp_path / "h.csv", "epoch,worker,inference\n0,a,1\n")
        with pytest.raises(ValidationError, match="header"):
            load_replay(inf, replay_files[1])

    def test_missing_file(self, tmp_path, replay_files):
        with pytest.raises(OSError):
            load_replay(tmp_path / "nope.csv", replay_files[1])

    def test_export_round_trip_bit_identical(self, tmp_path):
        cfg = TopicConfig(n_train=300, n_test=40, max_lag=20)
        sc = contextual_scenario(340, seed=4)
        paths = export_scenario(sc, tmp_path / "exp")
        back = load_replay(paths["inference"], paths["truth"], paths["market"])
        a, b = run_trial(sc, cfg, seed=4), run_trial(back, cfg, seed=4)
        for name in ("predicted", "implied", "naive", "network", "weights"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name

    def test_without_market_uses_baseline_only(self, tmp_path):
        cfg = TopicConfig(n_train=300, n_test=40, max_lag=20)
        paths = export_scenario(contextual_scenario(340, seed=4), tmp_path / "exp")
        res = run_trial(load_replay(paths["inference"], paths["truth"]), cfg, seed=4)
        assert np.all(np.isfinite(res.implied))


class TestCommands:
    def test_bench_outputs_and_determinism(self, tmp_path, small_ini):
        args = ["bench", "contextual", "--seed", "7", "--config", str(small_ini), "--bootstrap", "20"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a, b = (tmp_path / "a" / "trial.csv").read_bytes(), (tmp_path / "b" / "trial.csv").read_bytes()
        assert a == b
        lines = a.decode().splitlines()
        assert lines[0].startswith("# config_hash=") and lines[0].endswith(",seed=7")
        assert lines[1] == ",".join(TRIAL_COLUMNS)
        assert len(lines) == 2 + 40 * 10
        assert (tmp_path / "a" / "summary.json").exists()
        cfg, spec = load_config(tmp_path / "a" / "config.ini")
        assert cfg.seed == 7 and cfg.n_train == 300 and spec.kind == "contextual"

    def test_repeats_write_one_file_per_seed(self, tmp_path, small_ini):
        assert main(["bench", "contextual", "--seed", "3", "--repeats", "2", "--config", str(small_ini),
                     "--bootstrap", "0", "--out", str(tmp_path)]) == 0
        assert {p.name for p in tmp_path.glob("trial_*.csv")} == {"trial_seed3.csv", "trial_seed4.csv"}

    def test_bench_sine_default_specs(self):
        panel = sine_scenario(200, seed=0).panel
        assert panel.worker_ids[:2] == ("allo0", "allo1")
        default = sine_scenario.__defaults__[2]
        assert default == (SineSpec(1, 10), SineSpec(1.5, 17))

    def test_validation_exit_code(self, tmp_path, capsys):
        bad = write(tmp_path / "bad.ini", "[topic]\nn_train = -3\n")
        assert main(["bench", "contextual", "--config", str(bad), "--out", str(tmp_path)]) == 2
        assert "error[VALIDATION]" in capsys.readouterr().err

    def test_loss_on_sine_is_validation_error(self, tmp_path):
        ini = write(tmp_path / "s.ini", "[topic]\ntarget_kind = LOSS\n[scenario]\nkind = sine\n")
        assert main(["bench", "sine", "--config", str(ini), "--out", str(tmp_path)]) == 2

    def test_missing_replay_file_is_runtime_error(self, tmp_path, capsys):
        code = main(["replay", "--inference", str(tmp_path / "none.csv"),
                     "--truth", str(tmp_path / "none2.csv"), "--out", str(tmp_path)])
        assert code == 1
        assert "error[IO]" in capsys.readouterr().err

    def test_replay_command(self, tmp_path, small_ini):
        paths = export_scenario(contextual_scenario(340, seed=2), tmp_path / "exp")
        code = main(["replay", "--inference", str(paths["inference"]), "--truth", str(paths["truth"]),
                     "--config", str(small_ini), "--bootstrap", "0", "--out", str(tmp_path / "r")])
        assert code == 0
        assert read_stamp(tmp_path / "r" / "trial.csv")["seed"] == "0"

    def test_sweep_csv_and_thread_independence(self, tmp_path, small_ini):
        args = ["sweep", "--config", str(small_ini), "--repeats", "2", "--spans", "3", "7"]
        assert main(args + ["--threads", "1", "--out", str(tmp_path / "one")]) == 0
        assert main(args + ["--threads", "2", "--out", str(tmp_path / "two")]) == 0
        one = (tmp_path / "one" / "sweep.csv").read_bytes()
        assert one == (tmp_path / "two" / "sweep.csv").read_bytes()
        lines = one.decode().splitlines()
        assert lines[1] == "target,structure,spans,n_train,trial,seed,mean_log_loss,naive_log_loss"
        assert len(lines) == 2 + 3 * 2 * 2 * 2
        assert all(",300," in line for line in lines[2:])

    def test_report_renders_and_checks_hashes(self, tmp_path, small_ini):
        main(["bench", "contextual", "--seed", "1", "--config", str(small_ini), "--bootstrap", "0",
              "--out", str(tmp_path / "a")])
        assert main(["report", str(tmp_path / "a" / "trial.csv"), "--out", str(tmp_path / "plots"),
                     "--config", str(tmp_path / "a" / "config.ini")]) == 0
        svg = (tmp_path / "plots" / "trial.svg").read_text()
        assert svg.lstrip().startswith("<?xml") and "<svg" in svg

        other = write(tmp_path / "other.ini", SMALL_INI.replace("n_test = 40", "n_test = 30"))
        main(["bench", "contextual", "--seed", "1", "--config", str(other), "--bootstrap", "0",
              "--out", str(tmp_path / "b")])
        assert main(["report", str(tmp_path / "a" / "trial.csv"), str(tmp_path / "b" / "trial.csv"),
                     "--out", str(tmp_path / "plots")]) == 2
        assert main(["report", str(tmp_path / "a" / "trial.csv"), "--out", str(tmp_path / "plots"),
                     "--config", str(other)]) == 2

    def test_report_needs_stamp(self, tmp_path):
        f = write(tmp_path / "x.csv", "epoch,truth\n0,1\n")
        assert main(["report", str(f), "--out", str(tmp_path)]) == 2
