"""
Self-test suite
Checks metric analytics, degradation ranges, determinism and baseline
ordering on synthesized audio; needs no data files
"""
import filecmp
import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.conditioning import repeat_index_map
from src.degrade import DegradationSpec, mix_noise_at_snr, sample_applied
from src.dsp import rms
from src.harness import (
    build_corpus,
    default_snr_grid,
    evaluate_corpus,
    matrix_column_spec,
    run_enhancer,
)
from src.metrics import lsd, seg_snr, stoi
from src.synth import noise, speech_like, write_synthetic_corpus

logger = logging.getLogger(__name__)

PROTOCOL_DRAWS = 1000
RATE_TOLERANCE = 0.03
SNR_TOLERANCE_DB = 0.01


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ''


def check_metric_analytics():
    x = speech_like(2.0, seed=1)
    # broadband so no frame sits at the log floor
    n = noise(2.0, seed=1)
    values = {
        'stoi(x, x)': (stoi(x, x), 1.0, 1e-9),
        'seg_snr(x, x)': (seg_snr(x, x), 35.0, 0.0),
        'seg_snr(x, 0.5x)': (seg_snr(x, x.with_samples(0.5 * x.samples)), 6.02, 0.05),
        'lsd(x, 10x)': (lsd(n, n.with_samples(10.0 * n.samples)), 20.0, 0.01),
    }
    bad = [f"{k}={v:.4f}" for k, (v, want, tol) in values.items() if abs(v - want) > tol]
    return CheckResult('metric analytics', not bad, ', '.join(bad))


def check_snr_exactness():
    worst = 0.0
    rng = np.random.Generator(np.random.Philox(key=11))
    for index in range(20):
        speech = speech_like(1.0, seed=100 + index)
        n = noise(1.5, seed=200 + index, kind='pink' if index % 2 else 'white')
        target = float(rng.uniform(-5.0, 20.0))
        _, scaled = mix_noise_at_snr(speech, n, target)
        measured = 20.0 * np.log10(rms(speech.samples) / rms(scaled.samples))
        worst = max(worst, abs(measured - target))
    return CheckResult('snr exactness', worst <= SNR_TOLERANCE_DB, f"worst error {worst:.2e} dB")


def check_protocol_ranges():
    spec = DegradationSpec()
    counts = {'clip': 0, 'lpf': 0, 'attenuation': 0}
    problems = []
    for index in range(PROTOCOL_DRAWS):
        applied = sample_applied(spec, index, 48000, 16000)
        if applied.clip_ratio is not None:
            counts['clip'] += 1
            if not 0.06 <= applied.clip_ratio <= 0.9:
                problems.append(f"clip ratio {applied.clip_ratio}")
        if applied.lpf_cutoff_hz is not None:
            counts['lpf'] += 1
            if not 2000.0 <= applied.lpf_cutoff_hz <= 8000.0:
                problems.append(f"cutoff {applied.lpf_cutoff_hz}")
        if applied.attenuation_regions:
            counts['attenuation'] += 1
            if len(applied.attenuation_regions) > 20:
                problems.append("more than 20 regions")
            for region in applied.attenuation_regions:
                duration_ms = region.length_samples * 1000.0 / 16000
                if not (0.0 <= region.gain <= 0.01 and 10.0 <= duration_ms <= 50.0):
                    problems.append(f"region {region}")
    for factor, want in (('clip', 0.25), ('lpf', 0.5), ('attenuation', 0.8)):
        rate = counts[factor] / PROTOCOL_DRAWS
        if abs(rate - want) > RATE_TOLERANCE:
            problems.append(f"{factor} enable rate {rate:.3f}")
    return CheckResult('degradation ranges', not problems, '; '.join(problems[:5]))


def check_conditioning():
    mapping = repeat_index_map(3, 7).tolist()
    return CheckResult('frame repetition', mapping == [0, 0, 0, 1, 1, 2, 2], str(mapping))


def check_grid():
    grid = default_snr_grid()
    want = [-2.5, 0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5]
    return CheckResult('snr grid', grid == want, str(grid))


def _same_tree(a, b):
    names = sorted(p.name for p in (a / 'degraded').iterdir())
    _, mismatch, errors = filecmp.cmpfiles(a / 'degraded', b / 'degraded', names, shallow=False)
    return not mismatch and not errors


def check_determinism(work):
    clean_dir, noise_dir = write_synthetic_corpus(work / 'data', items=3, duration_s=2.0, seed=3)
    spec = DegradationSpec(seed=7)
    first = build_corpus(clean_dir, noise_dir, spec, work / 'run1', jobs=1)
    second = build_corpus(clean_dir, noise_dir, spec, work / 'run2', jobs=4)
    same = _same_tree(work / 'run1', work / 'run2')
    reports = [evaluate_corpus(run_enhancer(m, 'passthrough', jobs=1), jobs=1)
               for m in (first, second)]
    same_reports = reports[0].to_dict() == reports[1].to_dict()
    return CheckResult('determinism', same and same_reports,
                       '' if same else 'degraded WAVs differ')


def check_baseline_ordering(work):
    clean_dir, noise_dir = write_synthetic_corpus(work / 'data', items=3, duration_s=2.0, seed=5)
    base = DegradationSpec(seed=1234)
    noisy = matrix_column_spec(base, 'Noise')
    means = {}
    manifest = build_corpus(clean_dir, noise_dir, noisy, work / 'noise_only', jobs=1)
    for name in ('passthrough', 'spectral_subtract', 'oracle_mask'):
        restored = run_enhancer(manifest, name, out_dir=work / 'noise_only' / name, jobs=1)
        means[name] = evaluate_corpus(restored, jobs=1)
    noise_delta = means['oracle_mask'].deltas.mean('stoi')

    att = build_corpus(clean_dir, noise_dir, matrix_column_spec(base, 'Att.'), work / 'att_only', jobs=1)
    att_delta = evaluate_corpus(run_enhancer(att, 'oracle_mask', jobs=1), jobs=1).deltas.mean('stoi')

    stoi_means = [means[n].mean('stoi') for n in ('oracle_mask', 'spectral_subtract', 'passthrough')]
    ordered = stoi_means[0] >= stoi_means[1] >= stoi_means[2]
    detail = (f"oracle {stoi_means[0]:.4f} >= subtract {stoi_means[1]:.4f} >= passthrough "
              f"{stoi_means[2]:.4f}; att delta {att_delta:.4f} < noise delta {noise_delta:.4f}")
    return CheckResult('baseline ordering', ordered and att_delta < noise_delta, detail)


def run_selftest():
    """Run every check; returns the list of CheckResults"""
    results = []
    checks = [check_metric_analytics, check_snr_exactness, check_protocol_ranges,
              check_conditioning, check_grid]
    for check in checks:
        results.append(check())
    with tempfile.TemporaryDirectory(prefix='restobench-selftest-') as tmp:
        tmp = Path(tmp)
        results.append(check_determinism(tmp / 'determinism'))
        results.append(check_baseline_ordering(tmp / 'ordering'))
    for result in results:
        log = logger.info if result.passed else logger.error
        log("%s: %s %s", result.name, 'ok' if result.passed else 'FAILED', result.detail)
    return results
