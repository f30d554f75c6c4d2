"""
Synthetic test material
Speech-like harmonic signals with syllable envelopes and pauses, plus noise
colours, so every check can run without a corpus
"""
import logging
from pathlib import Path

import numpy as np
from scipy import signal

from src.audio import AudioBuffer, write_wav
from src.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_RATE = 16000
NOISE_KINDS = ('white', 'pink', 'hum')

# Syllable timing in seconds
SYLLABLE_RANGE_S = (0.12, 0.30)
PAUSE_RANGE_S = (0.05, 0.25)
PAUSE_PROB = 0.3

FORMANTS_HZ = ((700.0, 1200.0, 2600.0), (300.0, 2300.0, 3000.0), (500.0, 900.0, 2400.0),
               (350.0, 800.0, 2300.0), (600.0, 1700.0, 2500.0))


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _vowel(rng, length, sample_rate):
    """One voiced syllable: a gliding harmonic source through a formant set"""
    t = np.arange(length) / sample_rate
    f0 = rng.uniform(90.0, 220.0) * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    formants = FORMANTS_HZ[int(rng.integers(len(FORMANTS_HZ)))]
    nyquist = sample_rate / 2.0
    out = np.zeros(length)
    for harmonic in range(1, 40):
        freq = harmonic * f0.mean()
        if freq >= 0.95 * nyquist:
            break
        gain = sum(1.0 / (1.0 + ((freq - f) / 120.0) ** 2) for f in formants) / harmonic ** 0.5
        out += gain * np.sin(harmonic * phase)
    envelope = signal.windows.tukey(length, alpha=0.5)
    return out * envelope


def speech_like(duration_s=3.0, sample_rate=DEFAULT_RATE, seed=0, peak=0.5):
    """Deterministic speech-like utterance normalized to `peak`"""
    rng = _rng(seed)
    length = int(round(duration_s * sample_rate))
    out = np.zeros(length)
    cursor = int(0.05 * sample_rate)
    while cursor < length:
        if rng.random() < PAUSE_PROB:
            cursor += int(rng.uniform(*PAUSE_RANGE_S) * sample_rate)
            continue
        n = min(int(rng.uniform(*SYLLABLE_RANGE_S) * sample_rate), length - cursor)
        if n < 16:
            break
        out[cursor:cursor + n] += _vowel(rng, n, sample_rate) * rng.uniform(0.4, 1.0)
        cursor += n
    # light unvoiced texture so high bands are not empty
    out += 0.01 * signal.lfilter([1.0, -0.95], [1.0], rng.standard_normal(length)) * (np.abs(out) > 0)
    top = np.max(np.abs(out))
    if top > 0:
        out *= peak / top
    return AudioBuffer(out, sample_rate)


def noise(duration_s=3.0, sample_rate=DEFAULT_RATE, seed=0, kind='white'):
    """Stationary noise of the given colour at 0.1 RMS"""
    if kind not in NOISE_KINDS:
        raise DataError(f"unknown noise kind '{kind}'")
    rng = _rng(seed)
    length = int(round(duration_s * sample_rate))
    white = rng.standard_normal(length)
    if kind == 'white':
        out = white
    elif kind == 'pink':
        # 1/f via a 3-pole approximation
        b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
        a = [1.0, -2.494956002, 2.017265875, -0.522189400]
        out = signal.lfilter(b, a, white)
    else:
        t = np.arange(length) / sample_rate
        out = np.sin(2 * np.pi * 50.0 * t) + 0.5 * np.sin(2 * np.pi * 150.0 * t) + 0.1 * white
    out = out / np.sqrt(np.mean(out ** 2))
    return AudioBuffer(0.1 * out, sample_rate)


def write_synthetic_corpus(root, items=4, duration_s=3.0, sample_rate=DEFAULT_RATE, seed=0,
                           noise_kinds=('white', 'pink')):
    """Write clean/ and noise/ directories of synthetic WAVs; returns both paths"""
    root = Path(root)
    clean_dir, noise_dir = root / 'clean', root / 'noise'
    for index in range(items):
        write_wav(speech_like(duration_s, sample_rate, seed=seed * 1000 + index),
                  clean_dir / f'utt{index:03d}.wav')
    for index, kind in enumerate(noise_kinds):
        write_wav(noise(duration_s + 1.0, sample_rate, seed=seed * 1000 + 500 + index, kind=kind),
                  noise_dir / f'{kind}.wav')
    logger.debug("synthetic corpus in %s: %d items", root, items)
    return clean_dir, noise_dir
