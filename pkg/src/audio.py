"""
Audio buffers and WAV file I/O
Mono signals are held as float64 in memory and stored as IEEE float32 WAV
"""
import logging
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from src.errors import AudioFormatError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """A mono sampled signal with its sample rate"""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioFormatError(f"expected mono samples, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DataError(f"sample rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio contains NaN or Inf samples")
        # frozen dataclass: normalize through object.__setattr__
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        """Length in seconds"""
        return len(self) / self.sample_rate

    def with_samples(self, samples):
        """Return a new buffer at the same rate holding `samples`"""
        return AudioBuffer(samples, self.sample_rate)


def read_wav(path):
    """
    Read a mono WAV file
    Accepts 16-bit PCM and 32-bit IEEE float; multi-channel files are rejected
    """
    path = os.fspath(path)
    try:
        with warnings.catch_warnings():
            # unknown chunks (LIST, PEAK, ...) are harmless here
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})") from exc

    if data.ndim != 1:
        raise AudioFormatError(f"{path}: multi-channel input rejected ({data.shape[1]} channels)")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")

    logger.debug("read %s: %d samples at %d Hz", path, samples.shape[0], rate)
    return AudioBuffer(samples, rate)


def write_wav(buf, path):
    """Write a buffer as a mono IEEE float32 WAV file"""
    path = os.fspath(path)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    wavfile.write(path, buf.sample_rate, buf.samples.astype(np.float32))
