import numpy as np
import pytest

from fkgelab import cli
from fkgelab.config import (
    ConfigError,
    ExperimentConfig,
    emit_config,
    load_config,
    parse_config,
    save_config,
)


class TestConfigRoundTrip:
    def test_emit_parse_identity(self):
        cfg = ExperimentConfig(model="rotate", dim=16, overlap_frac=0.4,
                               dp_enabled=True, delta_t=2e-4, attack="cia")
        assert parse_config(emit_config(cfg)) == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = ExperimentConfig(lr=0.05, gamma=4.0)
        p = tmp_path / "exp.cfg"
        save_config(cfg, p)
        assert load_config(p) == cfg

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# a comment\n\nmodel = distmult\n")
        assert cfg.model == "distmult"

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("dim = 8\ndim = 16\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("learning_rate = 0.1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("dim = not-a-number\n")

    def test_validation(self):
        with pytest.raises(ConfigError):
            parse_config("model = transh\n")
        with pytest.raises(ConfigError):
            parse_config("overlap_frac = 1.5\n")


def write_cfg(tmp_path, **overrides):
    base = dict(n_entities=60, n_relations=6, n_triples=400, n_clients=3,
                overlap_frac=0.5, model="transe", dim=8, gamma=4.0, n_neg=8,
                rounds=2, local_iters=2, lr=0.05, attack="cip",
                attack_interval=1, n_candidates=20)
    base.update(overrides)
    cfg = ExperimentConfig(**base)
    p = tmp_path / "exp.cfg"
    save_config(cfg, p)
    return p


@pytest.fixture(autouse=True)
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "runs"))
    return tmp_path / "runs"


class TestCli:
    def test_train_writes_artifacts(self, tmp_path, out_dir):
        p = write_cfg(tmp_path)
        assert cli.main(["train", "--config", str(p), "--run-id", "t1"]) == cli.EXIT_OK
        run = out_dir / "t1"
        assert (run / "config.cfg").exists()
        assert (run / "metrics.txt").exists()
        assert (run / "manifest.txt").exists()
        assert list((run / "checkpoints").glob("client*_final.ckpt"))

    def test_attack_writes_traces(self, tmp_path, out_dir):
        p = write_cfg(tmp_path)
        assert cli.main(["attack", "--config", str(p), "--run-id", "a1"]) == cli.EXIT_OK
        sweeps = list((out_dir / "a1" / "attacks" / "cip").glob("*_sweep.csv"))
        assert sweeps

    def test_eval_reuses_run_config(self, tmp_path):
        p = write_cfg(tmp_path)
        assert cli.main(["train", "--config", str(p), "--run-id", "t2"]) == cli.EXIT_OK
        assert cli.main(["eval", "--run-id", "t2"]) == cli.EXIT_OK

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("model = transh\n", encoding="utf-8")
        assert cli.main(["train", "--config", str(bad), "--run-id", "x"]) \
            == cli.EXIT_CONFIG

    def test_missing_eval_run_is_config_error(self):
        assert cli.main(["eval", "--run-id", "nope"]) == cli.EXIT_CONFIG

    def test_runtime_error_exit_code(self, tmp_path):
        # partition failure: far too few triples for three clients
        p = write_cfg(tmp_path, n_triples=3, n_candidates=2)
        assert cli.main(["train", "--config", str(p), "--run-id", "x"]) \
            == cli.EXIT_RUNTIME

    def test_budget_exit_code_on_train(self, tmp_path):
        p = write_cfg(tmp_path, dp_enabled=True, epsilon_budget=1e-3,
                      dp_batch_size=8)
        assert cli.main(["train", "--config", str(p), "--run-id", "x"]) \
            == cli.EXIT_BUDGET

    def test_account_within_budget(self, tmp_path, capsys):
        p = write_cfg(tmp_path, dp_enabled=True, epsilon_budget=1e6, rounds=2,
                      n_entities=200, n_triples=3200)
        assert cli.main(["account", "--config", str(p)]) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert "epsilon after" in out

    def test_account_budget_exit_code(self, tmp_path):
        p = write_cfg(tmp_path, dp_enabled=True, epsilon_budget=1e-3,
                      n_entities=200, n_triples=3200)
        assert cli.main(["account", "--config", str(p)]) == cli.EXIT_BUDGET

    def test_account_invalid_rate_is_config_error(self, tmp_path):
        # q so large that no valid RDP order remains for the gradient bound
        p = write_cfg(tmp_path, dp_enabled=True, epsilon_budget=1e6)
        assert cli.main(["account", "--config", str(p)]) == cli.EXIT_CONFIG

    def test_account_requires_dp(self, tmp_path):
        p = write_cfg(tmp_path)
        assert cli.main(["account", "--config", str(p)]) == cli.EXIT_CONFIG

    def test_output_env_respected(self, tmp_path, monkeypatch):
        custom = tmp_path / "elsewhere"
        monkeypatch.setenv(cli.OUTPUT_ENV, str(custom))
        p = write_cfg(tmp_path)
        assert cli.main(["train", "--config", str(p), "--run-id", "t3"]) == cli.EXIT_OK
        assert (custom / "t3" / "manifest.txt").exists()
