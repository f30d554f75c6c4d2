"""Tests for src.metrics: STOI, segmental SNR, LSD and reports"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.audio import AudioBuffer
from src.degrade import lowpass_degrade, mix_noise_at_snr
from src.errors import (
    IncomparableReportsError,
    InsufficientSpeechError,
    LengthMismatchError,
    SilentReferenceError,
)
from src.metrics import (
    METRICS_NOTE,
    ItemMetrics,
    MetricReport,
    compute_item_metrics,
    improvement_delta,
    lsd,
    seg_snr,
    stoi,
    third_octave_bands,
)
from src.synth import noise, speech_like
from tests.stoi_reference import stoi_reference

STOI_RATE = 10000


def _noisy(clean, snr, seed):
    n = noise(clean.duration + 0.5, clean.sample_rate, seed=seed)
    mixture, _ = mix_noise_at_snr(clean, n, snr)
    return mixture


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------


class TestStoi:
    def test_identical(self) -> None:
        x = speech_like(2.0, STOI_RATE, seed=4)
        assert stoi(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_sign_flip(self) -> None:
        x = speech_like(2.0, STOI_RATE, seed=4)
        assert stoi(x, x.with_samples(-x.samples)) == pytest.approx(1.0, abs=1e-9)

    def test_matches_reference_at_0db(self) -> None:
        x = speech_like(3.0, STOI_RATE, seed=8)
        y = _noisy(x, 0.0, seed=3)
        assert stoi(x, y) == pytest.approx(stoi_reference(x.samples, y.samples), abs=1e-4)

    @pytest.mark.parametrize("index", range(20))
    def test_matches_reference_random_pairs(self, index) -> None:
        rng = np.random.default_rng(index)
        x = speech_like(1.5, STOI_RATE, seed=100 + index)
        y = _noisy(x, float(rng.uniform(-5.0, 20.0)), seed=200 + index)
        assert stoi(x, y) == pytest.approx(stoi_reference(x.samples, y.samples), abs=1e-4)

    def test_monotone_in_snr(self) -> None:
        x = speech_like(3.0, 16000, seed=6)
        values = [stoi(x, _noisy(x, snr, seed=1)) for snr in (-5, 0, 5, 10, 15, 20)]
        for low, high in zip(values, values[1:]):
            assert high >= low - 1e-3

    @given(st.floats(min_value=0.1, max_value=10.0))
    def test_scale_invariant(self, c) -> None:
        x = speech_like(1.5, STOI_RATE, seed=2)
        y = _noisy(x, 5.0, seed=2)
        scaled = y.with_samples(c * y.samples)
        assert stoi(x, scaled) == pytest.approx(stoi(x, y), abs=1e-6)

    def test_too_short(self) -> None:
        x = speech_like(0.2, STOI_RATE, seed=1)
        with pytest.raises(InsufficientSpeechError, match="insufficient speech"):
            stoi(x, x)

    def test_silent(self) -> None:
        x = AudioBuffer(np.zeros(STOI_RATE), STOI_RATE)
        with pytest.raises(InsufficientSpeechError):
            stoi(x, x)

    def test_length_mismatch(self, speech) -> None:
        with pytest.raises(LengthMismatchError, match="length mismatch"):
            stoi(speech, speech.with_samples(speech.samples[:-1]))

    def test_band_centres(self) -> None:
        bands, centres = third_octave_bands()
        assert bands.shape == (15, 257)
        assert centres[0] == pytest.approx(150.0)
        assert centres[-1] == pytest.approx(150.0 * 2 ** (14 / 3))


# ---------------------------------------------------------------------------
# Segmental SNR
# ---------------------------------------------------------------------------


class TestSegSnr:
    def test_cap(self, speech) -> None:
        assert seg_snr(speech, speech) == 35.0

    def test_half_amplitude(self, speech) -> None:
        half = speech.with_samples(0.5 * speech.samples)
        assert seg_snr(speech, half) == pytest.approx(6.02, abs=0.05)

    def test_equal_energy_frames(self, white) -> None:
        # error equal to the clean frame itself: 0 dB everywhere
        assert seg_snr(white, white.with_samples(np.zeros(len(white)))) == pytest.approx(0.0)

    def test_decreasing_in_noise(self, white) -> None:
        rng = np.random.default_rng(5)
        n = rng.standard_normal(len(white)) * 0.1
        values = [seg_snr(white, white.with_samples(white.samples + k * n))
                  for k in (0.06, 0.2, 0.6)]
        assert values[0] > values[1] > values[2]

    def test_silent_reference(self) -> None:
        z = AudioBuffer(np.zeros(16000), 16000)
        with pytest.raises(SilentReferenceError, match="silent reference"):
            seg_snr(z, z.with_samples(np.ones(16000)))


# ---------------------------------------------------------------------------
# Log-spectral distance
# ---------------------------------------------------------------------------


class TestLsd:
    def test_identical(self, white) -> None:
        assert lsd(white, white) == 0.0

    def test_gain_of_ten(self, white) -> None:
        assert lsd(white, white.with_samples(10 * white.samples)) == pytest.approx(20.0, abs=0.01)

    def test_bandwidth_ordering(self, white) -> None:
        narrow = lsd(white, lowpass_degrade(white, 4000.0))
        wide = lsd(white, lowpass_degrade(white, 6000.0))
        assert narrow > wide > 0.0

    def test_symmetric(self, white, speech) -> None:
        y = white.with_samples(white.samples[:len(speech)])
        assert lsd(speech, y) == pytest.approx(lsd(y, speech), abs=1e-9)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _report(values, label=""):
    return MetricReport([ItemMetrics(i, s, g, d) for i, s, g, d in values], label=label)


class TestMetricReport:
    def test_aggregate_and_order(self) -> None:
        report = _report([("b", 0.8, 10.0, 2.0), ("a", 0.6, 4.0, 4.0)])
        assert report.item_ids == ["a", "b"]
        assert report.mean("stoi") == pytest.approx(0.7, abs=1e-9)
        assert report.aggregate["seg_snr_db"]["std"] == pytest.approx(3.0)
        assert report.metrics_note == METRICS_NOTE

    def test_empty(self) -> None:
        assert _report([]).mean("stoi") is None

    def test_dict_round_trip(self) -> None:
        report = improvement_delta(_report([("a", 0.9, 5.0, 1.0)]), _report([("a", 0.8, 3.0, 2.0)]))
        assert MetricReport.from_dict(report.to_dict()) == report

    def test_compute_item_metrics(self, speech) -> None:
        item = compute_item_metrics("x", speech, speech)
        assert item.stoi == pytest.approx(1.0, abs=1e-9)
        assert item.seg_snr_db == 35.0
        assert item.lsd_db == 0.0


class TestImprovementDelta:
    def test_self_is_zero(self) -> None:
        report = _report([("a", 0.9, 5.0, 1.0), ("b", 0.7, 2.0, 3.0)])
        deltas = improvement_delta(report, report).deltas
        for metric in ("stoi", "seg_snr_db", "lsd_db"):
            assert deltas.mean(metric) == 0.0

    def test_single_item(self) -> None:
        delta = improvement_delta(_report([("a", 0.9, 5.0, 1.0)]), _report([("a", 0.8, 3.0, 2.0)]))
        assert delta.deltas.per_item[0].stoi == pytest.approx(0.1)
        assert delta.deltas.per_item[0].lsd_db == pytest.approx(-1.0)

    @given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20))
    def test_aggregate_is_mean_of_items(self, pairs) -> None:
        report = _report([(f"i{k}", a, 0.0, 0.0) for k, (a, _) in enumerate(pairs)])
        base = _report([(f"i{k}", b, 0.0, 0.0) for k, (_, b) in enumerate(pairs)])
        deltas = improvement_delta(report, base).deltas
        expected = np.mean([a - b for a, b in pairs])
        assert deltas.mean("stoi") == pytest.approx(expected, abs=1e-9)

    def test_incomparable(self) -> None:
        with pytest.raises(IncomparableReportsError, match="incomparable reports"):
            improvement_delta(_report([("a", 0.9, 5.0, 1.0)]), _report([("b", 0.9, 5.0, 1.0)]))
