"""Tests for src.harness: corpora, enhancers, evaluation and experiment protocols"""

import json
import sys
import textwrap
from dataclasses import replace

import pytest

from src.audio import read_wav, write_wav
from src.degrade import AttenuationSpec, ClipSpec, DegradationSpec, LpfSpec
from src.errors import NoInputItemsError, UsageError
from src.harness import (
    MATRIX_COLUMNS,
    ExperimentConfig,
    ExperimentRunner,
    Manifest,
    attenuation_point_spec,
    build_corpus,
    default_attenuation_lengths,
    default_snr_grid,
    evaluate_corpus,
    matrix_column_spec,
    run_enhancer,
    run_matrix,
    sweep_attenuation,
    sweep_snr,
)
from src.synth import noise

# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

COPY_ADAPTER = """
import json, shutil, sys
from pathlib import Path
manifest, out = Path(sys.argv[1]), Path(sys.argv[2])
out.mkdir(parents=True, exist_ok=True)
items = [i for i in json.loads(manifest.read_text())["items"] if i["status"] == "ok"]
{body}
"""

ADAPTERS = {
    "copy": "for i in items:\n    shutil.copy(manifest.parent / i['degraded_path'], out / (i['item_id'] + '.wav'))",
    "fail": "sys.exit(4)",
    "omit": "for i in items[1:]:\n    shutil.copy(manifest.parent / i['degraded_path'], out / (i['item_id'] + '.wav'))",
    "short": textwrap.dedent("""\
        import numpy as np
        from scipy.io import wavfile
        for n, i in enumerate(items):
            rate, data = wavfile.read(manifest.parent / i['degraded_path'])
            wavfile.write(out / (i['item_id'] + '.wav'), rate, data[:-100] if n == 0 else data)
        """),
    "slow": "import time\ntime.sleep(30)",
}


def _adapter(tmp_path, kind):
    script = tmp_path / f"adapter_{kind}.py"
    script.write_text(COPY_ADAPTER.format(body=ADAPTERS[kind]))
    return [sys.executable, str(script)]


def _noise_only(seed=1234):
    return DegradationSpec(clip=ClipSpec(enabled_prob=0.0), lpf=LpfSpec(enabled_prob=0.0),
                           attenuation=AttenuationSpec(enabled_prob=0.0), seed=seed)


@pytest.fixture
def corpus(tmp_path, corpus_dirs):
    clean_dir, noise_dir = corpus_dirs
    return build_corpus(clean_dir, noise_dir, DegradationSpec(seed=7), tmp_path / "corpus", jobs=1)


# ---------------------------------------------------------------------------
# Corpus building
# ---------------------------------------------------------------------------


class TestBuildCorpus:
    def test_items_and_sidecars(self, corpus) -> None:
        assert len(corpus.items) == 4
        assert corpus.path.is_file()
        for item in corpus.items:
            assert item.ok
            assert item.applied.snr_db in (2.5, 7.5, 12.5, 17.5)
            wav = corpus.resolve(item.degraded_path)
            assert wav.is_file()
            sidecar = json.loads(wav.with_suffix(".json").read_text())
            assert sidecar["item_id"] == item.item_id
            assert sidecar["snr_db"] == item.applied.snr_db
            assert len(read_wav(wav)) == len(read_wav(item.clean_path))

    def test_manifest_round_trip(self, corpus) -> None:
        loaded = Manifest.load(corpus.path)
        assert loaded.items == corpus.items
        assert loaded.spec == corpus.spec
        assert loaded.root == corpus.root

    def test_deterministic_across_jobs(self, tmp_path, corpus_dirs) -> None:
        clean_dir, noise_dir = corpus_dirs
        spec = DegradationSpec(seed=7)
        a = build_corpus(clean_dir, noise_dir, spec, tmp_path / "a", jobs=1)
        b = build_corpus(clean_dir, noise_dir, spec, tmp_path / "b", jobs=4)
        for x, y in zip(a.items, b.items):
            assert a.resolve(x.degraded_path).read_bytes() == b.resolve(y.degraded_path).read_bytes()
        da, db = a.to_dict(), b.to_dict()
        da.pop("created_utc"), db.pop("created_utc")
        assert da == db

    def test_noise_round_robin(self, corpus) -> None:
        sources = [item.applied.noise_source for item in corpus.items]
        assert sorted(set(sources)) == ["pink.wav", "white.wav"]
        assert sources.count("pink.wav") == 2

    def test_empty_clean_dir(self, tmp_path, corpus_dirs) -> None:
        (tmp_path / "empty").mkdir()
        with pytest.raises(NoInputItemsError, match="no input items"):
            build_corpus(tmp_path / "empty", corpus_dirs[1], DegradationSpec(), tmp_path / "out")

    def test_unreadable_item_recorded(self, tmp_path, corpus_dirs) -> None:
        clean_dir, noise_dir = corpus_dirs
        (clean_dir / "broken.wav").write_bytes(b"garbage")
        manifest = build_corpus(clean_dir, noise_dir, DegradationSpec(), tmp_path / "out", jobs=2)
        failed = manifest.failed_items("build")
        assert [item.item_id for item in failed] == ["broken"]
        assert failed[0].reason
        assert len(manifest.ok_items()) == 4

    def test_noise_resampled(self, tmp_path, corpus_dirs) -> None:
        clean_dir, _ = corpus_dirs
        write_wav(noise(2.0, 8000, seed=3), tmp_path / "n8k" / "low.wav")
        manifest = build_corpus(clean_dir, tmp_path / "n8k", _noise_only(), tmp_path / "out", jobs=1)
        assert all(item.ok for item in manifest.items)


# ---------------------------------------------------------------------------
# Enhancement
# ---------------------------------------------------------------------------


class TestRunEnhancer:
    def test_passthrough_byte_equal(self, corpus) -> None:
        result = run_enhancer(corpus, "passthrough", jobs=2)
        for item in result.items:
            restored = result.resolve(item.restored_path).read_bytes()
            assert restored == result.resolve(item.degraded_path).read_bytes()

    def test_copy_adapter_matches_passthrough(self, tmp_path, corpus) -> None:
        builtin = evaluate_corpus(run_enhancer(corpus, "passthrough", out_dir=tmp_path / "p"), jobs=1)
        external = evaluate_corpus(
            run_enhancer(corpus, _adapter(tmp_path, "copy"), out_dir=tmp_path / "c"), jobs=1)
        assert external.per_item == builtin.per_item

    def test_module_adapter(self, tmp_path, corpus) -> None:
        cmd = [sys.executable, "-m", "src.adapter", "passthrough"]
        result = run_enhancer(corpus, cmd, out_dir=tmp_path / "m")
        assert len(result.ok_items()) == 4

    def test_nonzero_exit_fails_all(self, tmp_path, corpus) -> None:
        result = run_enhancer(corpus, _adapter(tmp_path, "fail"))
        assert len(result.failed_items("enhance")) == 4
        assert "exited with code 4" in result.items[0].reason

    def test_missing_output(self, tmp_path, corpus) -> None:
        result = run_enhancer(corpus, _adapter(tmp_path, "omit"))
        failed = result.failed_items("enhance")
        assert [item.reason for item in failed] == ["missing output"]
        report = evaluate_corpus(result, jobs=1)
        assert len(report.per_item) == 3
        assert len(report.failed) == 1

    def test_earlier_outputs_not_reused(self, tmp_path, corpus) -> None:
        first = run_enhancer(corpus, "passthrough")
        result = run_enhancer(first, _adapter(tmp_path, "omit"))
        failed = result.failed_items("enhance")
        assert [item.item_id for item in failed] == [corpus.items[0].item_id]
        assert failed[0].reason == "missing output"
        assert not (corpus.root / "restored" / f"{corpus.items[0].item_id}.wav").exists()

    def test_wrong_length(self, tmp_path, corpus) -> None:
        result = run_enhancer(corpus, _adapter(tmp_path, "short"))
        failed = result.failed_items("enhance")
        assert len(failed) == 1
        assert failed[0].reason == "length mismatch"

    def test_timeout(self, tmp_path, corpus) -> None:
        result = run_enhancer(corpus, _adapter(tmp_path, "slow"), timeout_s=0.25)
        assert len(result.failed_items("enhance")) == 4
        assert "timed out" in result.items[0].reason


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class TestEvaluateCorpus:
    def test_degraded_baseline(self, corpus) -> None:
        report = evaluate_corpus(corpus, jobs=1)
        assert report.item_ids == sorted(item.item_id for item in corpus.items)
        for metric in ("stoi", "seg_snr_db", "lsd_db"):
            assert report.deltas.mean(metric) == 0.0

    def test_restored_equals_clean(self, corpus) -> None:
        items = [replace(item, restored_path=item.clean_path) for item in corpus.items]
        perfect = Manifest(items=items, spec=corpus.spec, root=corpus.root)
        report = evaluate_corpus(perfect, jobs=1)
        assert report.mean("stoi") == pytest.approx(1.0, abs=1e-9)
        assert report.mean("seg_snr_db") == 35.0

    def test_oracle_mask_improves(self, tmp_path, corpus_dirs) -> None:
        clean_dir, noise_dir = corpus_dirs
        manifest = build_corpus(clean_dir, noise_dir, _noise_only(), tmp_path / "n", jobs=1)
        report = evaluate_corpus(run_enhancer(manifest, "oracle_mask"), jobs=1)
        assert report.deltas.mean("stoi") > 0.0

    def test_accounting(self, tmp_path, corpus) -> None:
        result = run_enhancer(corpus, _adapter(tmp_path, "omit"))
        report = evaluate_corpus(result, jobs=1)
        assert len(report.per_item) + len(report.failed) == len(result.items)

    def test_end_to_end_deterministic(self, tmp_path, corpus_dirs) -> None:
        clean_dir, noise_dir = corpus_dirs
        reports = []
        for name, jobs in (("a", 1), ("b", 8)):
            manifest = build_corpus(clean_dir, noise_dir, DegradationSpec(seed=7), tmp_path / name, jobs=jobs)
            reports.append(evaluate_corpus(run_enhancer(manifest, "spectral_subtract", jobs=jobs), jobs=jobs))
        assert reports[0].to_dict() == reports[1].to_dict()


# ---------------------------------------------------------------------------
# Experiment protocols
# ---------------------------------------------------------------------------


class TestExperimentConfig:
    def test_defaults(self) -> None:
        config = ExperimentConfig(kind="snr_sweep")
        assert config.snr_grid_db == [-2.5, 0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5]
        assert config.attenuation_lengths_ms == [0, 25, 50, 75, 100, 125, 150, 175, 200]
        assert config.matrix == list(MATRIX_COLUMNS)

    @pytest.mark.parametrize("fields", [
        {"kind": "grid_search"},
        {"kind": "snr_sweep", "snr_grid_db": []},
        {"kind": "snr_sweep", "snr_grid_db": [5.0, 0.0]},
        {"kind": "attenuation_sweep", "attenuation_lengths_ms": [0, 0]},
        {"kind": "matrix", "matrix": ["Noise", "Reverb"]},
    ])
    def test_invalid(self, fields) -> None:
        with pytest.raises(UsageError):
            ExperimentConfig(**fields)

    def test_from_dict(self) -> None:
        config = ExperimentConfig.from_dict(
            {"kind": "matrix", "base_spec": {"seed": 3}, "matrix": ["noise", "att."]})
        assert config.base_spec.seed == 3
        assert config.matrix == ["Noise", "Att."]
        with pytest.raises(UsageError):
            ExperimentConfig.from_dict({"kind": "matrix", "extra": 1})


class TestSpecVariants:
    def test_zero_length_disables(self) -> None:
        assert attenuation_point_spec(DegradationSpec(), 0).attenuation.enabled_prob == 0.0
        spec = attenuation_point_spec(DegradationSpec(), 75)
        assert spec.attenuation.duration_range_ms == (75.0, 75.0)
        assert spec.seed == DegradationSpec().seed

    def test_matrix_columns(self) -> None:
        base = DegradationSpec()
        clip = matrix_column_spec(base, "Clip")
        assert (clip.clip.enabled_prob, clip.lpf.enabled_prob, clip.attenuation.enabled_prob) == (1, 0, 0)
        assert clip.noise.snr_set_db == [120.0]
        full = matrix_column_spec(base, "All")
        assert (full.clip.enabled_prob, full.lpf.enabled_prob, full.attenuation.enabled_prob) == (1, 1, 1)
        assert full.noise.snr_set_db == [2.5, 7.5, 12.5, 17.5]
        assert base.clip.enabled_prob == 0.25


class TestSweeps:
    def test_default_shapes(self) -> None:
        assert len(default_attenuation_lengths()) == 9
        assert default_snr_grid() == [-2.5, 0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5]

    def test_attenuation_sweep(self, tmp_path, corpus_dirs) -> None:
        clean_dir, noise_dir = corpus_dirs
        spec = DegradationSpec(clip=ClipSpec(enabled_prob=0.0), lpf=LpfSpec(enabled_prob=0.0),
                               attenuation=AttenuationSpec(enabled_prob=1.0, max_regions=3), seed=7)
        result = sweep_attenuation(spec, [0, 50, 100, 200], "passthrough", clean_dir, noise_dir,
                                   tmp_path / "att", jobs=2)
        assert result.values() == [0.0, 50.0, 100.0, 200.0]
        means = result.means("stoi")
        for shorter, longer in zip(means, means[1:]):
            assert longer <= shorter + 1e-3
        no_att = build_corpus(clean_dir, noise_dir, attenuation_point_spec(spec, 0), tmp_path / "ref")
        assert evaluate_corpus(no_att).per_item == result.points[0].report.per_item

    def test_snr_sweep_passthrough(self, tmp_path, corpus_dirs) -> None:
        clean_dir, noise_dir = corpus_dirs
        result = sweep_snr(_noise_only(), [0.0, 10.0], "passthrough", clean_dir, noise_dir,
                           tmp_path / "snr", jobs=1)
        assert result.values() == [0.0, 10.0]
        assert result.means("stoi", deltas=True) == [0.0, 0.0]
        assert result.means("stoi")[0] < result.means("stoi")[1]
        for point in result.points:
            manifest = Manifest.load(tmp_path / "snr" / f"snr_{point.value:g}dB" / "manifest.json")
            assert {item.applied.snr_db for item in manifest.items} == {point.value}

    def test_snr_sweep_rejects_unsorted(self, tmp_path, corpus_dirs) -> None:
        with pytest.raises(UsageError):
            sweep_snr(_noise_only(), [5.0, 0.0], "passthrough", *corpus_dirs, tmp_path)

    def test_matrix_oracle(self, tmp_path, corpus_dirs) -> None:
        clean_dir, noise_dir = corpus_dirs
        result = run_matrix(DegradationSpec(seed=3), ["Noise", "Att."], "oracle_mask",
                            clean_dir, noise_dir, tmp_path / "m", jobs=2)
        noise_delta, att_delta = result.means("stoi", deltas=True)
        assert result.values() == ["Noise", "Att."]
        assert att_delta < noise_delta

    def test_runner_dispatch(self, tmp_path, corpus_dirs) -> None:
        runner = ExperimentRunner(*corpus_dirs, tmp_path / "w", jobs=1)
        config = ExperimentConfig(kind="snr_sweep", base_spec=_noise_only(), snr_grid_db=[5.0])
        result = runner.run(config, seed=99)
        assert result.kind == "snr_sweep"
        manifest = Manifest.load(tmp_path / "w" / "snr_5dB" / "manifest.json")
        assert manifest.spec.seed == 99
