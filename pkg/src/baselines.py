"""
Reference restorers
Give the harness known metric orderings without any trained model
"""
import logging

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from src.audio import AudioBuffer
from src.dsp import Spectrogram, istft, stft
from src.errors import DataError, NoAnchorSamplesError, SignalTooShortError

logger = logging.getLogger(__name__)

FRAME_S = 0.032
HOP_S = 0.016
MASK_EPS = 1e-8
CLIP_TOLERANCE = 1e-6

# Spectral subtraction constants
OVERSUBTRACTION = 1.0
SPECTRAL_FLOOR = 0.02
DEFAULT_NOISE_FRAMES = 8

# Builtin declipper threshold relative to the observed peak
DECLIP_PEAK_FRACTION = 0.99


def _frame_params(sample_rate):
    frame_len = int(round(FRAME_S * sample_rate))
    hop = int(round(HOP_S * sample_rate))
    return frame_len, hop


def _padded(buf, frame_len, hop):
    """Zero-pad so every original sample lies under two analysis frames"""
    n = len(buf)
    total = n + 2 * hop
    frames = max(1, -(-(total - frame_len) // hop) + 1)
    padded_len = (frames - 1) * hop + frame_len
    out = np.zeros(padded_len)
    out[hop:hop + n] = buf.samples
    return AudioBuffer(out, buf.sample_rate)


def _analyze(buf):
    frame_len, hop = _frame_params(buf.sample_rate)
    return stft(_padded(buf, frame_len, hop), frame_len, hop, 'hann')


def _synthesize(spec, frames, length):
    restored = istft(Spectrogram(frames, spec.frame_len, spec.hop, spec.window, spec.sample_rate))
    return AudioBuffer(restored.samples[spec.hop:spec.hop + length], spec.sample_rate)


def passthrough(x):
    """The unprocessed input, bit for bit"""
    return x.with_samples(x.samples.copy())


def oracle_mask(x, clean):
    """
    Ratio mask computed from the clean reference, capped at 1
    Resynthesized with the degraded phase
    """
    if len(x) != len(clean) or x.sample_rate != clean.sample_rate:
        raise DataError("oracle mask needs equal lengths and sample rates")
    noisy = _analyze(x)
    target = _analyze(clean)
    mask = np.minimum(1.0, np.abs(target.frames) / (np.abs(noisy.frames) + MASK_EPS))
    return _synthesize(noisy, mask * noisy.frames, len(x))


def declip_interpolate(x, threshold):
    """
    Replace clipped runs by cubic Hermite interpolation between the
    unclipped neighbours; runs touching an edge are held at the threshold
    """
    if not threshold > 0:
        raise DataError(f"declip threshold must be positive, got {threshold}")
    samples = x.samples
    clipped = np.abs(samples) >= threshold * (1.0 - CLIP_TOLERANCE)
    if not np.any(clipped):
        return x.with_samples(samples.copy())
    if np.all(clipped):
        raise NoAnchorSamplesError()

    out = samples.copy()
    n = samples.shape[0]
    # maximal runs of clipped samples as [start, end) pairs
    edges = np.diff(np.concatenate([[0], clipped.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)

    for start, end in zip(starts, ends):
        if start == 0 or end == n:
            out[start:end] = np.sign(samples[start:end]) * threshold
            continue
        left, right = start - 1, end
        slope_left = samples[left] - samples[left - 1] if left >= 1 and not clipped[left - 1] else 0.0
        slope_right = samples[right + 1] - samples[right] if right + 1 < n and not clipped[right + 1] else 0.0
        spline = CubicHermiteSpline([left, right], [samples[left], samples[right]],
                                    [slope_left, slope_right])
        out[start:end] = spline(np.arange(start, end))
    return x.with_samples(out)


def _interior_frames(spec, length):
    """Indices of analysis frames lying wholly inside the unpadded signal"""
    starts = np.arange(spec.num_frames) * spec.hop
    inside = (starts >= spec.hop) & (starts + spec.frame_len <= spec.hop + length)
    return np.flatnonzero(inside)


def spectral_subtract(x, noise_floor_estimate_frames=DEFAULT_NOISE_FRAMES):
    """
    Magnitude spectral subtraction with a spectral floor
    The noise spectrum is the mean of the quietest frames; padded edge
    frames are never candidates
    """
    spec = _analyze(x)
    candidates = _interior_frames(spec, len(x))
    if candidates.shape[0] <= noise_floor_estimate_frames:
        raise SignalTooShortError(
            f"signal too short: {candidates.shape[0]} frames for a "
            f"{noise_floor_estimate_frames}-frame noise estimate")

    magnitude = np.abs(spec.frames)
    energy = np.sum(magnitude[candidates] ** 2, axis=1)
    quietest = candidates[np.argsort(energy, kind='stable')[:noise_floor_estimate_frames]]
    noise = np.mean(magnitude[quietest], axis=0)

    cleaned = np.maximum(magnitude - OVERSUBTRACTION * noise, SPECTRAL_FLOOR * magnitude)
    phase = np.exp(1j * np.angle(spec.frames))
    return _synthesize(spec, cleaned * phase, len(x))


def declip_builtin(x):
    """Declip with a threshold estimated from the degraded peak"""
    peak = float(np.max(np.abs(x.samples))) if len(x) else 0.0
    if peak == 0.0:
        return passthrough(x)
    return declip_interpolate(x, DECLIP_PEAK_FRACTION * peak)


# name -> (function, needs clean reference)
BUILTINS = {
    'passthrough': (lambda x, clean: passthrough(x), False),
    'oracle_mask': (lambda x, clean: oracle_mask(x, clean), True),
    'declip': (lambda x, clean: declip_builtin(x), False),
    'spectral_subtract': (lambda x, clean: spectral_subtract(x), False),
}


def run_builtin(name, x, clean=None):
    """Apply a builtin restorer by name"""
    if name not in BUILTINS:
        raise DataError(f"unknown builtin enhancer '{name}' (expected one of {sorted(BUILTINS)})")
    func, needs_clean = BUILTINS[name]
    if needs_clean and clean is None:
        raise DataError(f"builtin '{name}' needs the clean reference")
    return func(x, clean)
