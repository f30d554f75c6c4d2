"""Tests for src.cli: subcommands, exit codes and logging setup"""

import csv
import json
import logging
import sys

import numpy as np
import pytest

from src.adapter import main as adapter_main
from src.cli import main, setup_logging
from src.conditioning import FeatureMatrix, load_features, store_features


@pytest.fixture
def built(tmp_path, corpus_dirs):
    clean_dir, noise_dir = corpus_dirs
    out = tmp_path / "c1"
    assert main(["degrade", "--clean", str(clean_dir), "--noise", str(noise_dir),
                 "--spec", "paper-default", "--seed", "7", "--out", str(out), "--jobs", "2"]) == 0
    return out


class TestUsage:
    def test_unknown_flag(self, capsys) -> None:
        assert main(["degrade", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_command(self) -> None:
        assert main([]) == 1

    def test_missing_directory(self, tmp_path) -> None:
        code = main(["degrade", "--clean", str(tmp_path / "nope"), "--noise", str(tmp_path),
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_unknown_preset(self, tmp_path, corpus_dirs) -> None:
        code = main(["degrade", "--clean", str(corpus_dirs[0]), "--noise", str(corpus_dirs[1]),
                     "--spec", "nonexistent", "--out", str(tmp_path / "o")])
        assert code == 1


class TestCorpusCommands:
    def test_degrade_twice_identical(self, tmp_path, corpus_dirs, built) -> None:
        again = tmp_path / "c2"
        main(["degrade", "--clean", str(corpus_dirs[0]), "--noise", str(corpus_dirs[1]),
              "--seed", "7", "--out", str(again), "--jobs", "1"])
        for wav in sorted((built / "degraded").glob("*.wav")):
            assert wav.read_bytes() == (again / "degraded" / wav.name).read_bytes()
        first = json.loads((built / "manifest.json").read_text())
        second = json.loads((again / "manifest.json").read_text())
        assert first["spec"]["seed"] == 7
        assert first["items"] == second["items"]

    def test_evaluate_without_restored(self, built) -> None:
        assert main(["evaluate", "--manifest", str(built / "manifest.json")]) == 0
        report = json.loads((built / "report.json").read_text())
        assert len(report["per_item"]) == 4
        assert report["deltas"]["aggregate"]["stoi"]["mean"] == 0.0
        with open(built / "report.csv", newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["item_id", "stoi", "seg_snr_db", "lsd_db"]
        assert len(rows) == 6

    def test_enhance_then_evaluate(self, built) -> None:
        manifest = str(built / "manifest.json")
        assert main(["enhance", "--manifest", manifest, "--builtin", "oracle_mask"]) == 0
        assert main(["evaluate", "--manifest", manifest, "--format", "json"]) == 0
        report = json.loads((built / "report.json").read_text())
        assert report["deltas"]["aggregate"]["stoi"]["mean"] > 0.0

    def test_adapter_failure_exit_code(self, tmp_path, built) -> None:
        script = tmp_path / "fail.py"
        script.write_text("import sys\nsys.exit(1)\n")
        manifest = str(built / "manifest.json")
        code = main(["enhance", "--manifest", manifest, "--adapter", f"{sys.executable} {script}"])
        assert code == 3
        assert main(["evaluate", "--manifest", manifest]) == 0
        report = json.loads((built / "report.json").read_text())
        assert len(report["failed"]) == 4
        assert report["per_item"] == []


class TestExperimentCommands:
    def test_sweep_snr(self, tmp_path, corpus_dirs) -> None:
        code = main(["sweep-snr", "--clean", str(corpus_dirs[0]), "--noise", str(corpus_dirs[1]),
                     "--work", str(tmp_path / "w"), "--grid", "0,10", "--enhancer", "passthrough",
                     "--jobs", "2"])
        assert code == 0
        with open(tmp_path / "w" / "sweep-snr.csv", newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["experiment", "value", "metric", "mean", "std", "delta_mean"]
        assert len(rows) == 1 + 2 * 3

    def test_sweep_att(self, tmp_path, corpus_dirs) -> None:
        code = main(["sweep-att", "--clean", str(corpus_dirs[0]), "--noise", str(corpus_dirs[1]),
                     "--work", str(tmp_path / "w"), "--lengths", "0,100", "--out", str(tmp_path / "r")])
        assert code == 0
        result = json.loads((tmp_path / "r" / "sweep-att.json").read_text())
        assert [p["value"] for p in result["points"]] == [0.0, 100.0]

    def test_bad_grid(self, tmp_path, corpus_dirs) -> None:
        code = main(["sweep-snr", "--clean", str(corpus_dirs[0]), "--noise", str(corpus_dirs[1]),
                     "--work", str(tmp_path / "w"), "--grid", "10,0"])
        assert code == 1


class TestFeatures:
    def test_average_repeat_concat(self, tmp_path, capsys) -> None:
        rng = np.random.default_rng(0)
        store_features(FeatureMatrix(rng.standard_normal((3, 4, 2)), 50.0), tmp_path / "a.feat")
        assert main(["features", "inspect", str(tmp_path / "a.feat")]) == 0
        header = json.loads(capsys.readouterr().out)
        assert header == {"layers": 3, "frames": 4, "dim": 2, "frame_rate_hz": 50.0}

        assert main(["features", "average", str(tmp_path / "a.feat"), "--logits", "0,0,0",
                     "--out", str(tmp_path / "avg.feat")]) == 0
        assert main(["features", "repeat", str(tmp_path / "avg.feat"), "--frames", "8",
                     "--rate", "100", "--out", str(tmp_path / "rep.feat")]) == 0
        assert main(["features", "concat", str(tmp_path / "rep.feat"), str(tmp_path / "rep.feat"),
                     "--out", str(tmp_path / "cat.feat")]) == 0
        out = load_features(tmp_path / "cat.feat")
        assert (out.layers, out.frames, out.dim, out.frame_rate_hz) == (1, 8, 4, 100.0)

    def test_logit_count_mismatch(self, tmp_path) -> None:
        store_features(FeatureMatrix(np.zeros((3, 4, 2)), 50.0), tmp_path / "a.feat")
        code = main(["features", "average", str(tmp_path / "a.feat"), "--logits", "0,0",
                     "--out", str(tmp_path / "x.feat")])
        assert code == 2

    def test_bad_magic(self, tmp_path) -> None:
        (tmp_path / "x.feat").write_bytes(b"nonsense" * 4)
        assert main(["features", "inspect", str(tmp_path / "x.feat")]) == 2


class TestLogging:
    @pytest.mark.parametrize("value,level", [("debug", logging.DEBUG), ("info", logging.INFO),
                                             ("error", logging.ERROR), ("loud", logging.WARNING)])
    def test_env_level(self, monkeypatch, value, level) -> None:
        monkeypatch.setenv("RESTOBENCH_LOG", value)
        setup_logging()
        assert logging.getLogger().level == level

    def test_adapter_uses_same_setup(self, monkeypatch, tmp_path, built) -> None:
        monkeypatch.setenv("RESTOBENCH_LOG", "debug")
        assert adapter_main(["passthrough", str(built / "manifest.json"), str(tmp_path / "r")]) == 0
        assert logging.getLogger().level == logging.DEBUG
        assert len(list((tmp_path / "r").glob("*.wav"))) == 4


class TestSelftest:
    def test_passes_without_data(self, capsys) -> None:
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert out.count("ok") >= 7
