"""
Signal operations shared by every other module
STFT/ISTFT, resampling, FIR low-pass design and level measurement
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from src.audio import AudioBuffer
from src.errors import (
    DataError,
    InvalidCutoffError,
    ReconstructionError,
    SignalTooShortError,
)

logger = logging.getLogger(__name__)

# Analysis window identifiers and their scipy names
WINDOWS = {
    'hann': 'hann',
    'rect': 'boxcar',
    'rectangular': 'boxcar',
    'blackman': 'blackman',
}

MIN_FRAME_LEN = 16

# Low-pass design
LOWPASS_TAPS = 511
BLACKMAN_HALF_TRANSITION = 2.75  # half transition width, in fs/(taps-1)
TEMPLATE_MARGIN = 0.15           # fraction of cutoff the half transition may use

# Resampler: Kaiser windowed-sinc, half-length per unit of max(up, down)
RESAMPLE_HALF_LENGTH = 64
RESAMPLE_KAISER_BETA = 8.6

SILENCE_DB = -120.0


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT coefficients laid out frames x bins"""
    frames: np.ndarray
    frame_len: int
    hop: int
    window: str
    sample_rate: int

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.frame_len // 2 + 1:
            raise DataError(
                f"expected {self.frame_len // 2 + 1} bins, got frames of shape {self.frames.shape}"
            )
        if not 1 <= self.hop <= self.frame_len:
            raise DataError(f"hop must lie in [1, frame_len], got {self.hop}")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def magnitude(self):
        return np.abs(self.frames)


@dataclass(frozen=True, eq=False)
class FirFilter:
    """Linear-phase (type I) FIR filter"""
    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.shape[0] % 2 == 0:
            raise DataError("FIR filter needs an odd number of taps")
        if np.max(np.abs(taps - taps[::-1])) > 1e-12:
            raise DataError("FIR taps are not symmetric")
        object.__setattr__(self, "taps", taps)

    @property
    def group_delay(self):
        """Delay in samples introduced by the filter"""
        return (self.taps.shape[0] - 1) // 2


def get_window(window, frame_len):
    """Periodic analysis window for the given identifier"""
    if window not in WINDOWS:
        raise DataError(f"unknown window '{window}' (expected one of {sorted(WINDOWS)})")
    return signal.get_window(WINDOWS[window], frame_len, fftbins=True)


def stft(buf, frame_len, hop, window='hann'):
    """
    Short-time Fourier transform without padding
    The last partial frame is dropped
    """
    frame_len = int(frame_len)
    hop = int(hop)
    if frame_len < MIN_FRAME_LEN:
        raise DataError(f"frame_len must be at least {MIN_FRAME_LEN}, got {frame_len}")
    if hop < 1 or hop > frame_len:
        raise DataError(f"hop must lie in [1, frame_len], got {hop}")
    if len(buf) < frame_len:
        raise SignalTooShortError()

    win = get_window(window, frame_len)
    frames = sliding_window_view(buf.samples, frame_len)[::hop]
    coeffs = np.fft.rfft(frames * win, axis=-1)
    return Spectrogram(coeffs, frame_len, hop, window, buf.sample_rate)


def istft(spec):
    """
    Overlap-add synthesis with window-square normalization
    Samples no window covers come out as zero
    """
    win = get_window(spec.window, spec.frame_len)
    if not signal.check_NOLA(win, spec.frame_len, spec.frame_len - spec.hop):
        raise ReconstructionError()

    frames = np.fft.irfft(spec.frames, n=spec.frame_len, axis=-1)
    length = (spec.num_frames - 1) * spec.hop + spec.frame_len
    out = np.zeros(length)
    norm = np.zeros(length)
    win_sq = win ** 2
    for index, frame in enumerate(frames):
        start = index * spec.hop
        out[start:start + spec.frame_len] += frame * win
        norm[start:start + spec.frame_len] += win_sq

    covered = norm > 1e-10
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    return AudioBuffer(out, spec.sample_rate)


def resample(buf, target_rate):
    """
    Polyphase windowed-sinc resampling
    Equal rates return an exact copy
    """
    if int(target_rate) != target_rate or target_rate <= 0:
        raise DataError(f"target rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == buf.sample_rate:
        return buf.with_samples(buf.samples.copy())

    g = math.gcd(target_rate, buf.sample_rate)
    up = target_rate // g
    down = buf.sample_rate // g
    max_rate = max(up, down)

    # cutoff at the Nyquist frequency of the lower rate
    half_len = RESAMPLE_HALF_LENGTH * max_rate
    taps = signal.firwin(2 * half_len + 1, 1.0 / max_rate,
                         window=('kaiser', RESAMPLE_KAISER_BETA))
    out = signal.resample_poly(buf.samples, up, down, window=taps)

    n_out = int(math.floor(len(buf) * target_rate / buf.sample_rate + 0.5))
    if out.shape[0] >= n_out:
        out = out[:n_out]
    else:
        out = np.concatenate([out, np.zeros(n_out - out.shape[0])])
    logger.debug("resampled %d -> %d Hz (%d/%d)", buf.sample_rate, target_rate, up, down)
    return AudioBuffer(out, target_rate)


def lowpass_tap_count(cutoff, sample_rate):
    """Smallest odd tap count (at least LOWPASS_TAPS) meeting the design template"""
    needed = BLACKMAN_HALF_TRANSITION * sample_rate / (TEMPLATE_MARGIN * cutoff)
    taps = max(LOWPASS_TAPS, int(math.ceil(needed)) + 1)
    if taps % 2 == 0:
        taps += 1
    return taps


def design_lowpass(cutoff, sample_rate):
    """
    Design a linear-phase windowed-sinc low-pass filter
    Blackman window; 511 taps unless a low cutoff needs a longer kernel
    """
    if not 0 < cutoff < sample_rate / 2:
        raise InvalidCutoffError(f"invalid cutoff: {cutoff} Hz at {sample_rate} Hz")
    numtaps = lowpass_tap_count(cutoff, sample_rate)
    taps = signal.firwin(numtaps, cutoff, window='blackman', fs=sample_rate)
    # enforce exact symmetry against rounding in the sinc evaluation
    taps = 0.5 * (taps + taps[::-1])
    return FirFilter(taps)


def apply_fir(buf, filt):
    """
    Filter a buffer, compensating the group delay
    Output has the input length; edges are zero-padded
    """
    if len(buf) == 0:
        return buf.with_samples(buf.samples.copy())
    full = signal.fftconvolve(buf.samples, filt.taps, mode='full')
    delay = filt.group_delay
    return buf.with_samples(full[delay:delay + len(buf)])


def rms(samples):
    """Root mean square of a sample array"""
    samples = np.asarray(samples, dtype=np.float64)
    return float(np.sqrt(np.mean(samples ** 2)))


def level_db(buf):
    """RMS level in dB; silence reports the SILENCE_DB floor"""
    if len(buf) == 0:
        raise DataError("level of an empty buffer is undefined")
    value = rms(buf.samples)
    if value == 0.0:
        return SILENCE_DB
    return max(SILENCE_DB, 20.0 * math.log10(value))
