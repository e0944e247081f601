import hashlib
import json

import pytest

from hmnet.cli import main
from hmnet.config import load_run_config, write_resolved
from hmnet.model import ConfigError


TOY_CONFIG = """[data]
name = toy
kind = synthetic
steps = 260
variables = 2

[model]
input_length = 16
horizon = 4
hidden_dim = 6
block_sizes = 4,2
memory_capacity = 64
top_k = 4

[train]
max_epochs = 2
patience = 2
batch_size = 16

[noise]
probabilities = 0,0.2

[sweep]
horizons = 4
memory_configs = 8:1,64:4
"""


@pytest.fixture
def toy_config(tmp_path):
    p = tmp_path / "toy.ini"
    p.write_text(TOY_CONFIG)
    return p


class TestConfigParsing:
    def test_defaults_materialize(self, toy_config):
        cfg = load_run_config(toy_config)
        assert cfg.model.hidden_dim == 6
        assert cfg.train.learning_rate == 1e-3
        assert [lv.block_size for lv in cfg.model.levels] == [4, 2]
        assert cfg.data.ratios == (0.7, 0.1, 0.2)

    def test_invalid_block_product_rejected_with_arithmetic(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text(TOY_CONFIG.replace("block_sizes = 4,2", "block_sizes = 5,2"))
        with pytest.raises(ConfigError, match=r"16 = 5 \* 3 \+ 1"):
            load_run_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "nope.ini")

    def test_overrides(self, toy_config):
        cfg = load_run_config(toy_config, {"seed": 9, "horizon": 8, "out": "x", "jobs": 2})
        assert cfg.train.seed == 9
        assert cfg.model.horizon == 8
        assert cfg.sweep.horizons == (8,)
        assert cfg.out_dir == "x" and cfg.jobs == 2

    def test_resolved_config_reloads_identically(self, toy_config, tmp_path):
        cfg = load_run_config(toy_config)
        echo = write_resolved(cfg, tmp_path / "resolved.ini")
        cfg2 = load_run_config(echo)
        assert cfg2.model == cfg.model
        assert cfg2.train == cfg.train
        assert cfg2.noise == cfg.noise
        assert cfg2.sweep == cfg.sweep

    def test_registry_lookup(self, tmp_path):
        (tmp_path / "registry.ini").write_text(
            "[mini]\nkind = synthetic\nsteps = 260\nvariables = 2\n"
            "train_ratio = 0.6\nval_ratio = 0.2\ntest_ratio = 0.2\n"
        )
        cfg_text = TOY_CONFIG.replace(
            "name = toy\nkind = synthetic\nsteps = 260\nvariables = 2",
            "name = mini\nregistry = registry.ini",
        )
        p = tmp_path / "cfg.ini"
        p.write_text(cfg_text)
        cfg = load_run_config(p)
        assert cfg.data.kind == "synthetic"
        assert cfg.data.ratios == (0.6, 0.2, 0.2)


class TestIngest:
    def test_summary_and_cache(self, toy_config, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["ingest", "--config", str(toy_config), "--out", str(out)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "T_total=260" in text and "N=2" in text
        assert (out / "toy.cache").exists()

    def test_reingest_identical_checksum(self, toy_config, tmp_path):
        out = tmp_path / "out"
        main(["ingest", "--config", str(toy_config), "--out", str(out)])
        first = hashlib.sha256((out / "toy.cache").read_bytes()).hexdigest()
        main(["ingest", "--config", str(toy_config), "--out", str(out)])
        assert hashlib.sha256((out / "toy.cache").read_bytes()).hexdigest() == first

    def test_malformed_csv_exits_one_without_cache(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("date,a\n2020-01-01,1\nnot-a-date,2\n")
        cfg = tmp_path / "cfg.ini"
        cfg.write_text(
            f"[data]\nname = bad\nkind = csv\npath = {bad}\n\n"
            "[model]\ninput_length = 16\nhorizon = 4\nblock_sizes = 4,2\n"
        )
        out = tmp_path / "out"
        rc = main(["ingest", "--config", str(cfg), "--out", str(out)])
        assert rc == 1
        assert not (out / "bad.cache").exists()
        assert "timestamp" in capsys.readouterr().err


class TestTrainEval:
    def test_train_writes_report_checkpoint_and_figures(self, toy_config, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main(["train", "--config", str(toy_config), "--out", str(out)])
        assert rc == 0
        assert (out / "model.ckpt").exists()
        assert (out / "toy_4_full.json").exists()
        assert (out / "toy_train.csv").exists()
        assert (out / "toy_history.png").exists()
        assert (out / "train_config_resolved.ini").exists()
        payload = json.loads((out / "toy_4_full.json").read_text())
        assert payload["dataset"] == "toy" and len(payload["runs"]) == 1

    def test_eval_roundtrip(self, toy_config, tmp_path):
        out = tmp_path / "run"
        main(["train", "--config", str(toy_config), "--out", str(out)])
        rc = main([
            "eval", "--config", str(toy_config), "--out", str(tmp_path / "evalrun"),
            "--checkpoint", str(out / "model.ckpt"),
        ])
        assert rc == 0
        assert (tmp_path / "evalrun" / "toy_4_full.json").exists()

    def test_eval_without_checkpoint_is_validation_error(self, toy_config, tmp_path):
        rc = main([
            "eval", "--config", str(toy_config), "--out", str(tmp_path / "e"),
            "--checkpoint", "",
        ])
        assert rc == 1


class TestSweepCommands:
    def test_ablate_writes_four_variants(self, toy_config, tmp_path):
        out = tmp_path / "ab"
        rc = main(["ablate", "--config", str(toy_config), "--out", str(out)])
        assert rc == 0
        files = sorted(f.name for f in out.glob("toy_4_*.json"))
        assert files == [
            "toy_4_full.json",
            "toy_4_no_both.json",
            "toy_4_no_denoise.json",
            "toy_4_no_interact.json",
        ]

    def test_noise_writes_grid_rows(self, toy_config, tmp_path):
        out = tmp_path / "nz"
        rc = main(["noise", "--config", str(toy_config), "--out", str(out)])
        assert rc == 0
        from hmnet.reporting import read_reports_csv

        rows = read_reports_csv(out / "toy_h4_noise.csv")
        assert len(rows) == 8  # 2 settings x 2 probabilities x 2 variants
        assert (out / "toy_h4_noise.png").exists()

    def test_memsweep_rows(self, toy_config, tmp_path):
        out = tmp_path / "ms"
        rc = main(["memsweep", "--config", str(toy_config), "--out", str(out)])
        assert rc == 0
        from hmnet.reporting import read_reports_csv

        rows = read_reports_csv(out / "toy_memsweep.csv")
        assert len(rows) == 2
        assert (out / "toy_memsweep.png").exists()


class TestSelfcheckCommand:
    def test_clean_build_passes(self, capsys):
        rc = main(["selfcheck"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "FAIL" not in out
        assert "max err" in out  # each check reports its observed error

    def test_corrupted_diagonal_fails_naming_invariant(self, capsys):
        rc = main(["selfcheck", "--corrupt", "wv-diagonal"])
        out = capsys.readouterr().out
        assert rc == 2
        assert "diag(w_v)" in out and "FAIL" in out
