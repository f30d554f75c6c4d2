"""
Objective speech measures
STOI for intelligibility; segmental SNR and log-spectral distance stand in
for PESQ and NISQA
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.dsp import resample, stft
from src.errors import (
    DataError,
    IncomparableReportsError,
    InsufficientSpeechError,
    LengthMismatchError,
    SignalTooShortError,
    SilentReferenceError,
)

logger = logging.getLogger(__name__)

METRICS = ('stoi', 'seg_snr_db', 'lsd_db')
METRICS_NOTE = ('segSNR and LSD stand in for PESQ and NISQA; '
                'values are not comparable to PESQ/NISQA scores')
REPORT_SCHEMA_VERSION = 1

# STOI constants (canonical 2011 definition)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0
EPS = np.finfo(np.float64).eps

# Segmental SNR
SEG_FRAME_S = 0.030
SEG_SNR_MIN_DB = -10.0
SEG_SNR_MAX_DB = 35.0
SEG_ACTIVE_RANGE_DB = 60.0

# Log-spectral distance
LSD_FRAME_S = 0.032
LSD_HOP_S = 0.016
LSD_FLOOR = 1e-10


def _check_pair(clean, processed):
    if clean.sample_rate != processed.sample_rate:
        raise DataError(f"sample rate mismatch: {clean.sample_rate} vs {processed.sample_rate} Hz")
    if len(clean) != len(processed):
        raise LengthMismatchError(f"length mismatch: {len(clean)} vs {len(processed)} samples")


def _hann_stoi(n):
    # symmetric Hann without its zero end points
    return np.hanning(n + 2)[1:-1]


def _frame_starts(length, frame_len, hop):
    return np.arange(0, length - frame_len, hop)


def _overlap_add(frames, hop):
    count, frame_len = frames.shape
    out = np.zeros((count - 1) * hop + frame_len)
    for index, frame in enumerate(frames):
        out[index * hop:index * hop + frame_len] += frame
    return out


def remove_silent_frames(x, y, dyn_range=STOI_DYN_RANGE_DB, frame_len=STOI_FRAME, hop=STOI_FRAME // 2):
    """
    Drop frames of both signals where the clean frame is more than
    `dyn_range` dB below the loudest clean frame
    """
    window = _hann_stoi(frame_len)
    starts = _frame_starts(x.shape[0], frame_len, hop)
    if starts.shape[0] == 0:
        raise InsufficientSpeechError()
    index = starts[:, None] + np.arange(frame_len)[None, :]
    x_frames = x[index] * window
    y_frames = y[index] * window
    energies = 20.0 * np.log10(np.linalg.norm(x_frames, axis=1) + EPS)
    keep = (energies - np.max(energies) + dyn_range) > 0
    if not np.any(keep):
        raise InsufficientSpeechError()
    return _overlap_add(x_frames[keep], hop), _overlap_add(y_frames[keep], hop)


def third_octave_bands(fs=STOI_FS, nfft=STOI_NFFT, num_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    """One-third octave band matrix (bands x bins) and centre frequencies"""
    freqs = np.linspace(0, fs, nfft + 1)[:nfft // 2 + 1]
    k = np.arange(num_bands, dtype=np.float64)
    centres = min_freq * 2.0 ** (k / 3.0)
    low = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    high = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    bands = np.zeros((num_bands, freqs.shape[0]))
    for band in range(num_bands):
        lo_bin = int(np.argmin((freqs - low[band]) ** 2))
        hi_bin = int(np.argmin((freqs - high[band]) ** 2))
        bands[band, lo_bin:hi_bin] = 1.0
    return bands, centres


def _stoi_spectrum(x):
    window = _hann_stoi(STOI_FRAME)
    starts = _frame_starts(x.shape[0], STOI_FRAME, STOI_FRAME // 2)
    index = starts[:, None] + np.arange(STOI_FRAME)[None, :]
    return np.fft.rfft(x[index] * window, n=STOI_NFFT, axis=1)


def stoi(clean, processed):
    """
    Short-time objective intelligibility of `processed` against `clean`
    Returns the mean envelope correlation over bands and 384 ms segments
    """
    _check_pair(clean, processed)
    if len(clean) == 0 or not np.any(clean.samples):
        raise InsufficientSpeechError()

    x = resample(clean, STOI_FS).samples
    y = resample(processed, STOI_FS).samples
    x, y = remove_silent_frames(x, y)

    bands, _ = third_octave_bands()
    x_spec = _stoi_spectrum(x)
    y_spec = _stoi_spectrum(y)
    if x_spec.shape[0] < STOI_SEGMENT:
        raise InsufficientSpeechError()

    # band envelopes, bands x frames
    x_env = np.sqrt(bands @ (np.abs(x_spec) ** 2).T)
    y_env = np.sqrt(bands @ (np.abs(y_spec) ** 2).T)

    # segments of N frames: bands x segments x N
    x_seg = sliding_window_view(x_env, STOI_SEGMENT, axis=1)
    y_seg = sliding_window_view(y_env, STOI_SEGMENT, axis=1)

    norm = np.linalg.norm(x_seg, axis=2, keepdims=True) / (
        np.linalg.norm(y_seg, axis=2, keepdims=True) + EPS)
    y_norm = y_seg * norm
    clip_value = 10.0 ** (-STOI_BETA_DB / 20.0)
    y_prime = np.minimum(y_norm, x_seg * (1.0 + clip_value))

    x_c = x_seg - np.mean(x_seg, axis=2, keepdims=True)
    y_c = y_prime - np.mean(y_prime, axis=2, keepdims=True)
    x_c = x_c / (np.linalg.norm(x_c, axis=2, keepdims=True) + EPS)
    y_c = y_c / (np.linalg.norm(y_c, axis=2, keepdims=True) + EPS)
    correlations = np.sum(x_c * y_c, axis=2)
    return float(np.mean(correlations))


def seg_snr(clean, processed):
    """
    Segmental SNR over non-overlapping 30 ms frames
    Frames are clamped to [-10, 35] dB; silent reference frames are skipped
    """
    _check_pair(clean, processed)
    frame_len = int(round(SEG_FRAME_S * clean.sample_rate))
    count = len(clean) // frame_len
    if count == 0:
        raise SignalTooShortError()

    x = clean.samples[:count * frame_len].reshape(count, frame_len)
    y = processed.samples[:count * frame_len].reshape(count, frame_len)
    signal_energy = np.sum(x ** 2, axis=1)
    error_energy = np.sum((x - y) ** 2, axis=1)

    with np.errstate(divide='ignore', invalid='ignore'):
        energy_db = 10.0 * np.log10(signal_energy)
        frame_snr = 10.0 * np.log10(signal_energy / error_energy)
    if not np.any(signal_energy > 0):
        raise SilentReferenceError()

    active = energy_db > np.max(energy_db) - SEG_ACTIVE_RANGE_DB
    frame_snr = np.where(error_energy == 0.0, SEG_SNR_MAX_DB, frame_snr)
    frame_snr = np.clip(frame_snr[active], SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
    return float(np.mean(frame_snr))


def lsd(clean, processed):
    """Log-spectral distance in dB (mean over frames of the per-frame RMS)"""
    _check_pair(clean, processed)
    frame_len = int(round(LSD_FRAME_S * clean.sample_rate))
    hop = int(round(LSD_HOP_S * clean.sample_rate))
    clean_power = np.abs(stft(clean, frame_len, hop, 'hann').frames) ** 2
    processed_power = np.abs(stft(processed, frame_len, hop, 'hann').frames) ** 2
    diff = 10.0 * np.log10(clean_power + LSD_FLOOR) - 10.0 * np.log10(processed_power + LSD_FLOOR)
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=1))))


@dataclass
class ItemMetrics:
    item_id: str
    stoi: float
    seg_snr_db: float
    lsd_db: float

    def to_dict(self):
        return {'item_id': self.item_id, 'stoi': self.stoi,
                'seg_snr_db': self.seg_snr_db, 'lsd_db': self.lsd_db}


def compute_item_metrics(item_id, clean, processed):
    """All three measures for one item"""
    return ItemMetrics(item_id, stoi(clean, processed), seg_snr(clean, processed),
                       lsd(clean, processed))


def aggregate(per_item):
    """Mean and population standard deviation per metric"""
    result = {}
    for metric in METRICS:
        values = np.array([getattr(item, metric) for item in per_item], dtype=np.float64)
        if values.size == 0:
            result[metric] = {'mean': None, 'std': None}
        else:
            result[metric] = {'mean': float(np.mean(values)), 'std': float(np.std(values))}
    return result


@dataclass
class MetricReport:
    """Per-item and aggregate measures, with optional improvement deltas"""
    per_item: List[ItemMetrics]
    aggregate: Dict[str, Dict[str, Optional[float]]] = None
    deltas: Optional['MetricReport'] = None
    failed: List[Dict[str, str]] = field(default_factory=list)
    label: str = ''
    tool_version: str = ''
    metrics_note: str = METRICS_NOTE
    schema_version: int = REPORT_SCHEMA_VERSION

    def __post_init__(self):
        self.per_item = sorted(self.per_item, key=lambda item: item.item_id)
        if self.aggregate is None:
            self.aggregate = aggregate(self.per_item)

    @property
    def item_ids(self):
        return [item.item_id for item in self.per_item]

    def mean(self, metric):
        return self.aggregate[metric]['mean']

    def to_dict(self):
        return {
            'schema_version': self.schema_version,
            'tool_version': self.tool_version,
            'metrics_note': self.metrics_note,
            'label': self.label,
            'per_item': [item.to_dict() for item in self.per_item],
            'aggregate': self.aggregate,
            'deltas': self.deltas.to_dict() if self.deltas is not None else None,
            'failed': list(self.failed),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            per_item=[ItemMetrics(**item) for item in data['per_item']],
            aggregate=data.get('aggregate'),
            deltas=cls.from_dict(data['deltas']) if data.get('deltas') else None,
            failed=list(data.get('failed', [])),
            label=data.get('label', ''),
            tool_version=data.get('tool_version', ''),
            metrics_note=data.get('metrics_note', METRICS_NOTE),
            schema_version=data.get('schema_version', REPORT_SCHEMA_VERSION),
        )


def improvement_delta(report, baseline):
    """
    Attach per-item and aggregate differences (report - baseline)
    Both reports must cover the same items
    """
    if set(report.item_ids) != set(baseline.item_ids) or len(report.item_ids) != len(baseline.item_ids):
        raise IncomparableReportsError()
    base = {item.item_id: item for item in baseline.per_item}
    deltas = []
    for item in report.per_item:
        ref = base[item.item_id]
        deltas.append(ItemMetrics(item.item_id, item.stoi - ref.stoi,
                                  item.seg_snr_db - ref.seg_snr_db, item.lsd_db - ref.lsd_db))
    return MetricReport(
        per_item=list(report.per_item),
        aggregate=report.aggregate,
        deltas=MetricReport(per_item=deltas, label='delta', tool_version=report.tool_version),
        failed=list(report.failed),
        label=report.label,
        tool_version=report.tool_version,
    )
