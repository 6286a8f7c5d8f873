import json
import subprocess
import sys

import numpy as np
import pytest

from sgcvq import ConfigError
from sgcvq.harness import (CSV_COLUMNS, compare_experiment, execute,
                           load_experiment_config, override_config,
                           parse_experiment_config, quantize_features,
                           run_experiment, write_indices)
from sgcvq.snapshot import load_snapshot_file
from sgcvq.synth import save_features


def _raw_config(**overrides):
    raw = {
        "engine": {"codebook_size": 16, "code_dim": 16, "num_levels": 4,
                   "num_classes": 4, "seed": 21, "variant": "sgc"},
        "mixture": {"num_classes": 4, "separation": 8.0, "within_spread": 0.8,
                    "detail_spread": 1.0, "seed": 21},
        "steps": 30,
        "batch_shape": [1, 8, 8],
        "metrics_every": 10,
        "usage_window": 20,
    }
    raw.update(overrides)
    return raw


class TestConfigParsing:
    def test_roundtrip(self):
        cfg = parse_experiment_config(_raw_config())
        assert cfg.steps == 30
        assert cfg.batch_shape == (1, 8, 8)
        assert cfg.engine.codebook_size == 16

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown config key 'stepz'"):
            parse_experiment_config(_raw_config(stepz=5))

    def test_unknown_engine_key(self):
        raw = _raw_config()
        raw["engine"]["codebook"] = 4
        with pytest.raises(ConfigError, match="'codebook'"):
            parse_experiment_config(raw)

    def test_unknown_mixture_key(self):
        raw = _raw_config()
        raw["mixture"]["spread"] = 1.0
        with pytest.raises(ConfigError, match="'spread'"):
            parse_experiment_config(raw)

    def test_mixture_xor_sequence(self):
        raw = _raw_config()
        raw["sequence"] = dict(raw["mixture"], frames=5)
        with pytest.raises(ConfigError, match="exactly one"):
            parse_experiment_config(raw)
        del raw["mixture"]
        del raw["steps"]
        cfg = parse_experiment_config(raw)
        assert cfg.steps == 5

    def test_sequence_steps_must_match_frames(self):
        raw = _raw_config()
        raw["sequence"] = dict(raw.pop("mixture"), frames=5)
        raw["steps"] = 7
        with pytest.raises(ConfigError, match="frames"):
            parse_experiment_config(raw)

    def test_class_count_cross_check(self):
        raw = _raw_config()
        raw["mixture"]["num_classes"] = 5
        raw["mixture"]["seed"] = 21
        with pytest.raises(ConfigError, match="num_classes"):
            parse_experiment_config(raw)

    def test_seed_override_hits_engine_and_mixture(self):
        cfg = parse_experiment_config(_raw_config())
        cfg2 = override_config(cfg, seed=99)
        assert cfg2.engine.seed == 99
        assert cfg2.mixture.seed == 99


class TestRun:
    def test_metrics_row_count(self, tmp_path):
        cfg = parse_experiment_config(_raw_config(steps=1, metrics_every=1))
        run = run_experiment(cfg, tmp_path)
        lines = (tmp_path / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 2

    def test_rows_every_interval(self, tmp_path):
        cfg = parse_experiment_config(_raw_config(steps=30, metrics_every=10))
        run = run_experiment(cfg, tmp_path)
        assert [r.step_index for r in run.rows] == [10, 20, 30]

    def test_deterministic_outputs(self, tmp_path):
        cfg = parse_experiment_config(_raw_config())
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for name in ("metrics.csv", "report.json", "snapshot.bin"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_engine_state_persisted(self, tmp_path):
        cfg = parse_experiment_config(_raw_config())
        run = run_experiment(cfg, tmp_path)
        codebook, tracker, bank, engine_cfg = load_snapshot_file(
            tmp_path / "snapshot.bin")
        assert np.array_equal(codebook.entries, run.state.codebook.entries)
        assert engine_cfg == cfg.engine
        assert codebook.version == cfg.steps


class TestCompare:
    def test_variant_rows_and_shared_stream(self, tmp_path):
        raw = _raw_config(variants=["cvq", "sgc"])
        raw["mixture"]["unlabeled_fraction"] = 1.0
        cfg = parse_experiment_config(raw)
        runs = compare_experiment(cfg, tmp_path)
        lines = (tmp_path / "comparison.csv").read_text().strip().split("\n")
        assert len(lines) == 3
        assert lines[0].startswith("variant,")
        # fully unlabeled data leaves the semantic path inert: identical rows
        assert lines[1].split(",", 1)[1] == lines[2].split(",", 1)[1]
        assert np.array_equal(runs["cvq"].state.codebook.entries,
                              runs["sgc"].state.codebook.entries)

    def test_needs_two_variants(self, tmp_path):
        cfg = parse_experiment_config(_raw_config(variants=["sgc"]))
        with pytest.raises(ConfigError, match="at least 2"):
            compare_experiment(cfg, tmp_path)

    def test_thread_cap_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SGCVQ_THREADS", "1")
        cfg = parse_experiment_config(_raw_config(variants=["cvq", "sgc"]))
        runs = compare_experiment(cfg, tmp_path)
        assert set(runs) == {"cvq", "sgc"}


class TestQuantizeCommand:
    def _trained(self, tmp_path):
        cfg = parse_experiment_config(_raw_config())
        run = run_experiment(cfg, tmp_path)
        return cfg, run

    def test_codebook_rows_identity(self, tmp_path):
        from sgcvq.state import FeatureBatch
        cfg, run = self._trained(tmp_path)
        entries = run.state.codebook.entries
        k, d = entries.shape
        batch = FeatureBatch(features=entries.reshape(1, 1, k, d).copy(),
                             labels=np.zeros((1, 1, k), dtype=np.int32))
        feats = tmp_path / "feats.bin"
        save_features(feats, batch)
        summary = quantize_features(tmp_path / "snapshot.bin", feats,
                                    tmp_path / "idx.bin")
        data = (tmp_path / "idx.bin").read_bytes()
        assert data.startswith(b"SGCVQ-IDX v1\n")
        body = data.split(b"\n", 2)[2]
        idx = np.frombuffer(body, dtype="<i4")
        assert np.array_equal(idx, np.arange(k))
        assert summary["codebook_loss"] == 0.0

    def test_dim_mismatch_rejected(self, tmp_path):
        from sgcvq import DataFormatError
        from sgcvq.state import FeatureBatch
        cfg, run = self._trained(tmp_path)
        batch = FeatureBatch(features=np.zeros((1, 1, 2, 8)),
                             labels=np.zeros((1, 1, 2), dtype=np.int32))
        feats = tmp_path / "feats8.bin"
        save_features(feats, batch)
        with pytest.raises(DataFormatError, match="code_dim"):
            quantize_features(tmp_path / "snapshot.bin", feats,
                              tmp_path / "idx.bin")

    def test_replay_of_final_training_batch(self, tmp_path):
        # a converged codebook re-assigns the last training batch identically
        raw = _raw_config(steps=400, metrics_every=400)
        raw["engine"]["variant"] = "cvq"
        cfg = parse_experiment_config(raw)
        run = run_experiment(cfg, tmp_path)
        feats = tmp_path / "final_batch.bin"
        save_features(feats, run.final_batch)
        quantize_features(tmp_path / "snapshot.bin", feats, tmp_path / "idx.bin")
        body = (tmp_path / "idx.bin").read_bytes().split(b"\n", 2)[2]
        idx = np.frombuffer(body, dtype="<i4")
        assert np.array_equal(idx, run.final_result.flat_indices())


class TestCli:
    def _run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "sgcvq.cli", *args],
                              capture_output=True, text=True)

    def test_run_and_rerun_byte_identical(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(_raw_config()))
        a = self._run_cli("run", "--config", str(cfg_path), "--out",
                          str(tmp_path / "a"))
        assert a.returncode == 0, a.stderr
        b = self._run_cli("run", "--config", str(cfg_path), "--out",
                          str(tmp_path / "b"))
        assert b.returncode == 0
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()
        assert (tmp_path / "a" / "snapshot.bin").read_bytes() == \
            (tmp_path / "b" / "snapshot.bin").read_bytes()

    def test_seed_override_changes_outputs(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(_raw_config()))
        a = self._run_cli("run", "--config", str(cfg_path), "--out",
                          str(tmp_path / "a"), "--seed", "42")
        assert a.returncode == 0
        b = self._run_cli("run", "--config", str(cfg_path), "--out",
                          str(tmp_path / "b"))
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_invalid_config_exit_2(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(_raw_config(unknown_key=1)))
        proc = self._run_cli("run", "--config", str(cfg_path), "--out",
                             str(tmp_path / "out"))
        assert proc.returncode == 2

    def test_missing_config_exit_3(self, tmp_path):
        proc = self._run_cli("run", "--config", str(tmp_path / "nope.json"),
                             "--out", str(tmp_path / "out"))
        assert proc.returncode == 3

    def test_quantize_dim_mismatch_exit_2(self, tmp_path):
        from sgcvq.state import FeatureBatch
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(_raw_config()))
        assert self._run_cli("run", "--config", str(cfg_path), "--out",
                             str(tmp_path / "run")).returncode == 0
        batch = FeatureBatch(features=np.zeros((1, 1, 2, 4)),
                             labels=np.zeros((1, 1, 2), dtype=np.int32))
        save_features(tmp_path / "f.bin", batch)
        proc = self._run_cli("quantize", "--snapshot",
                             str(tmp_path / "run" / "snapshot.bin"),
                             "--features", str(tmp_path / "f.bin"),
                             "--out", str(tmp_path / "i.bin"))
        assert proc.returncode == 2

    def test_compare_cli(self, tmp_path):
        raw = _raw_config(variants=["vanilla_ema", "cvq", "sgc"], steps=20)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(raw))
        proc = self._run_cli("compare", "--config", str(cfg_path), "--out",
                             str(tmp_path / "cmp"))
        assert proc.returncode == 0, proc.stderr
        payload = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
        assert set(payload) == {"vanilla_ema", "cvq", "sgc"}
