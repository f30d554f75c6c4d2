"""
Feature conditioning mechanics for external speech representations
Layer weighting, frame-rate matching by repetition, concatenation, and the
FEAT1 feature file format
"""
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from src.errors import (
    BadMagicError,
    DataError,
    DimensionOverflowError,
    TruncatedFeatureFileError,
    UnalignedStreamsError,
    WeightMismatchError,
)

logger = logging.getLogger(__name__)

FEAT1_MAGIC = b'FEAT1\x00'
FEAT1_HEADER = struct.Struct('<6sIIIf')
# 2**31 float32 values (8 GiB) is far beyond any representation we read
MAX_FEATURE_VALUES = 1 << 31


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Layers x frames x dims representation tensor"""
    values: np.ndarray
    frame_rate_hz: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3 or min(values.shape) < 1:
            raise DataError(f"feature tensor must be L x T x D with every axis >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("feature tensor contains NaN or Inf")
        # stored as f32 on disk, so keep the in-memory rate at f32 precision
        rate = float(np.float32(self.frame_rate_hz))
        if not rate > 0:
            raise DataError(f"frame rate must be positive, got {self.frame_rate_hz}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "frame_rate_hz", rate)

    @property
    def layers(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]

    @property
    def dim(self):
        return self.values.shape[2]

    def equals(self, other):
        """Bit-exact comparison of values and frame rate"""
        return (self.frame_rate_hz == other.frame_rate_hz
                and self.values.shape == other.values.shape
                and self.values.tobytes() == other.values.tobytes())


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """Softmax-normalized layer weights derived from logits"""
    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 1 or logits.shape[0] < 1 or not np.all(np.isfinite(logits)):
            raise DataError("layer logits must be a non-empty finite vector")
        object.__setattr__(self, "logits", logits)

    @property
    def weights(self):
        return softmax(self.logits)

    def __len__(self):
        return self.logits.shape[0]


def weighted_layer_average(fm, lw):
    """Collapse the layer axis with the softmax weights; output has one layer"""
    if len(lw) != fm.layers:
        raise WeightMismatchError(
            f"weight/layer count mismatch: {len(lw)} weights for {fm.layers} layers")
    averaged = np.tensordot(lw.weights, fm.values.astype(np.float64), axes=(0, 0))
    return FeatureMatrix(averaged[np.newaxis], fm.frame_rate_hz)


def repeat_index_map(source_frames, target_frames):
    """Source frame feeding each target frame: floor(t * T / target)"""
    t = np.arange(target_frames, dtype=np.int64)
    return np.minimum(source_frames - 1, (t * source_frames) // target_frames)


def repeat_frames_to(fm, target_frames, target_rate_hz):
    """Match a frame rate by repeating frames (nearest lower index)"""
    if int(target_frames) != target_frames or target_frames < 1:
        raise DataError(f"target frame count must be a positive integer, got {target_frames}")
    index = repeat_index_map(fm.frames, int(target_frames))
    return FeatureMatrix(fm.values[:, index, :], target_rate_hz)


def concat_features(a, b):
    """Concatenate two single-layer streams along the feature axis"""
    if a.layers != 1 or b.layers != 1:
        raise DataError(f"concatenation needs single-layer streams, got {a.layers} and {b.layers}")
    if a.frames != b.frames:
        raise UnalignedStreamsError(
            f"unaligned feature streams: {a.frames} vs {b.frames} frames")
    if a.frame_rate_hz != b.frame_rate_hz:
        logger.warning("concatenating streams at %.3f and %.3f Hz; keeping %.3f Hz",
                       a.frame_rate_hz, b.frame_rate_hz, a.frame_rate_hz)
    return FeatureMatrix(np.concatenate([a.values, b.values], axis=2), a.frame_rate_hz)


def store_features(fm, path):
    """Write a FEAT1 file"""
    layers, frames, dim = fm.values.shape
    header = FEAT1_HEADER.pack(FEAT1_MAGIC, layers, frames, dim, fm.frame_rate_hz)
    payload = np.ascontiguousarray(fm.values, dtype='<f4').tobytes()
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(payload)


def load_features(path):
    """
    Read a FEAT1 file
    Raises BadMagicError, DimensionOverflowError or TruncatedFeatureFileError
    """
    with open(path, 'rb') as handle:
        data = handle.read()

    if len(data) < len(FEAT1_MAGIC) or data[:len(FEAT1_MAGIC)] != FEAT1_MAGIC:
        raise BadMagicError()
    if len(data) < FEAT1_HEADER.size:
        raise TruncatedFeatureFileError()

    _, layers, frames, dim, rate = FEAT1_HEADER.unpack_from(data)
    count = layers * frames * dim
    if min(layers, frames, dim) < 1 or count > MAX_FEATURE_VALUES:
        raise DimensionOverflowError(
            f"feature dimensions {layers} x {frames} x {dim} out of range")

    expected = FEAT1_HEADER.size + 4 * count
    if len(data) < expected:
        raise TruncatedFeatureFileError()
    if len(data) > expected:
        logger.warning("%s: %d trailing bytes ignored", path, len(data) - expected)

    values = np.frombuffer(data, dtype='<f4', count=count, offset=FEAT1_HEADER.size)
    return FeatureMatrix(values.reshape(layers, frames, dim).astype(np.float32), rate)
