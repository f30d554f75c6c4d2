"""
Degradation factors and their seeded composition
Realizes x = f(s) + n: attenuation, clipping and band-limiting act on the
speech, additive noise is mixed in last
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from src.audio import AudioBuffer
from src.dsp import apply_fir, design_lowpass, rms
from src.errors import (
    DataError,
    DegenerateReferenceError,
    InvalidRegionError,
    SpecError,
)

logger = logging.getLogger(__name__)

DEFAULT_SEED = 1234
MASK64 = (1 << 64) - 1

FACTORS = ('attenuation', 'clip', 'lpf')
DEFAULT_CHAIN_ORDER = ('attenuation', 'clip', 'lpf')
CLIP_MODES = ('peak', 'absolute')

# Upper bound on LPF cutoff as a fraction of the sample rate
MAX_CUTOFF_FRACTION = 0.45
# Rejected region placements tolerated per item
MAX_PLACEMENT_RETRIES = 1000
# Noise-free configurations mix at this SNR
NOISE_FREE_SNR_DB = 120.0

# Counter blocks of the per-item Philox stream, one per factor
_STREAM_BLOCKS = {'clip': 1, 'lpf': 2, 'attenuation': 3, 'noise': 4}


def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        raise SpecError(f"{where}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise SpecError(f"{where}: unknown field(s) {', '.join(unknown)}")


def _check_range(values, where, lo=None, hi=None, lo_open=False, hi_open=False):
    if not isinstance(values, (list, tuple)) or len(values) != 2:
        raise SpecError(f"{where}: expected a [lo, hi] pair")
    a, b = float(values[0]), float(values[1])
    if not (math.isfinite(a) and math.isfinite(b)) or a > b:
        raise SpecError(f"{where}: need finite lo <= hi, got [{a}, {b}]")
    for v in (a, b):
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise SpecError(f"{where}: {v} below allowed minimum {lo}")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            raise SpecError(f"{where}: {v} above allowed maximum {hi}")
    return (a, b)


def _check_prob(value, where):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise SpecError(f"{where}: probability must lie in [0, 1], got {value}")
    return value


@dataclass
class ClipSpec:
    enabled_prob: float = 0.25
    ratio_range: Tuple[float, float] = (0.06, 0.9)
    mode: str = 'peak'

    def validate(self):
        self.enabled_prob = _check_prob(self.enabled_prob, 'clip.enabled_prob')
        if self.mode not in CLIP_MODES:
            raise SpecError(f"clip.mode: expected one of {CLIP_MODES}, got '{self.mode}'")
        hi = 1.0 if self.mode == 'peak' else None
        self.ratio_range = _check_range(self.ratio_range, 'clip.ratio_range',
                                        lo=0.0, hi=hi, lo_open=True)


@dataclass
class LpfSpec:
    enabled_prob: float = 0.5
    cutoff_range_hz: Tuple[float, float] = (2000.0, 8000.0)

    def validate(self):
        self.enabled_prob = _check_prob(self.enabled_prob, 'lpf.enabled_prob')
        self.cutoff_range_hz = _check_range(self.cutoff_range_hz, 'lpf.cutoff_range_hz',
                                            lo=0.0, lo_open=True)


@dataclass
class AttenuationSpec:
    enabled_prob: float = 0.8
    gain_range: Tuple[float, float] = (0.0, 0.01)
    duration_range_ms: Tuple[float, float] = (10.0, 50.0)
    max_regions: int = 20

    def validate(self):
        self.enabled_prob = _check_prob(self.enabled_prob, 'attenuation.enabled_prob')
        self.gain_range = _check_range(self.gain_range, 'attenuation.gain_range',
                                       lo=0.0, hi=1.0, hi_open=True)
        self.duration_range_ms = _check_range(self.duration_range_ms,
                                              'attenuation.duration_range_ms', lo=0.0)
        if int(self.max_regions) != self.max_regions or self.max_regions < 1:
            raise SpecError(f"attenuation.max_regions: need a positive integer, got {self.max_regions}")
        self.max_regions = int(self.max_regions)


@dataclass
class NoiseSpec:
    snr_set_db: Optional[List[float]] = field(default_factory=lambda: [2.5, 7.5, 12.5, 17.5])
    snr_range_db: Optional[Tuple[float, float]] = None

    def validate(self):
        if (self.snr_set_db is None) == (self.snr_range_db is None):
            raise SpecError("noise: give exactly one of snr_set_db or snr_range_db")
        if self.snr_set_db is not None:
            if not self.snr_set_db:
                raise SpecError("noise.snr_set_db: must not be empty")
            values = [float(v) for v in self.snr_set_db]
            if not all(math.isfinite(v) for v in values):
                raise SpecError("noise.snr_set_db: values must be finite")
            self.snr_set_db = values
        else:
            self.snr_range_db = _check_range(self.snr_range_db, 'noise.snr_range_db')


@dataclass
class DegradationSpec:
    """Complete parameterization of the degradation f and the noise mixing"""
    clip: ClipSpec = field(default_factory=ClipSpec)
    lpf: LpfSpec = field(default_factory=LpfSpec)
    attenuation: AttenuationSpec = field(default_factory=AttenuationSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = DEFAULT_SEED
    chain_order: Tuple[str, ...] = DEFAULT_CHAIN_ORDER

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Check every field; raises SpecError on the first violation"""
        self.clip.validate()
        self.lpf.validate()
        self.attenuation.validate()
        self.noise.validate()
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) \
                or not 0 <= self.seed <= MASK64:
            raise SpecError(f"seed: need an unsigned 64-bit integer, got {self.seed!r}")
        self.seed = int(self.seed)
        order = tuple(self.chain_order)
        if sorted(order) != sorted(FACTORS):
            raise SpecError(f"chain_order: need a permutation of {FACTORS}, got {list(order)}")
        self.chain_order = order

    @classmethod
    def from_dict(cls, data):
        """Build a spec from its JSON object; unknown fields are rejected"""
        _check_keys(data, ('clip', 'lpf', 'attenuation', 'noise', 'seed', 'chain_order'), 'spec')
        parts = {}
        for name, part_cls in (('clip', ClipSpec), ('lpf', LpfSpec),
                               ('attenuation', AttenuationSpec), ('noise', NoiseSpec)):
            if name in data:
                section = data[name]
                _check_keys(section, part_cls.__dataclass_fields__, name)
                try:
                    parts[name] = part_cls(**section)
                except TypeError as exc:
                    raise SpecError(f"{name}: {exc}") from exc
        if 'noise' in data and set(data['noise']) == {'snr_range_db'}:
            parts['noise'].snr_set_db = None
        if 'seed' in data:
            parts['seed'] = data['seed']
        if 'chain_order' in data:
            parts['chain_order'] = tuple(data['chain_order'])
        return cls(**parts)

    def to_dict(self):
        data = asdict(self)
        data['chain_order'] = list(self.chain_order)
        for section in ('clip', 'lpf', 'attenuation', 'noise'):
            for key, value in data[section].items():
                if isinstance(value, tuple):
                    data[section][key] = list(value)
        if data['noise']['snr_set_db'] is None:
            del data['noise']['snr_set_db']
        else:
            del data['noise']['snr_range_db']
        return data

    @classmethod
    def load(cls, path):
        """Read a spec from a JSON file"""
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(self.to_dict(), handle, indent=2)
            handle.write('\n')

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass(frozen=True)
class AttenuationRegion:
    start_sample: int
    length_samples: int
    gain: float

    @classmethod
    def from_dict(cls, data):
        return cls(int(data['start_sample']), int(data['length_samples']), float(data['gain']))


@dataclass
class AppliedDegradation:
    """Ground-truth record of the degradation drawn for one corpus item"""
    clip_ratio: Optional[float] = None
    lpf_cutoff_hz: Optional[float] = None
    attenuation_regions: List[AttenuationRegion] = field(default_factory=list)
    noise_source: str = ''
    snr_db: float = NOISE_FREE_SNR_DB
    seed_used: int = 0
    noise_offset_frac: float = 0.0
    clip_mode: str = 'peak'
    chain_order: Tuple[str, ...] = DEFAULT_CHAIN_ORDER
    attenuation_note: Optional[str] = None

    def to_dict(self):
        data = asdict(self)
        data['chain_order'] = list(self.chain_order)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['attenuation_regions'] = [AttenuationRegion.from_dict(r)
                                       for r in data.get('attenuation_regions', [])]
        if 'chain_order' in data:
            data['chain_order'] = tuple(data['chain_order'])
        return cls(**data)


def splitmix64(value):
    """SplitMix64 finalizer; a bijective 64-bit hash"""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def item_stream_key(seed, item_index):
    """Per-item RNG key: master seed XOR hash of the item index"""
    return (int(seed) ^ splitmix64(int(item_index) & MASK64)) & MASK64


def factor_rng(stream_key, factor):
    """Independent generator for one factor of one item"""
    block = _STREAM_BLOCKS[factor]
    return np.random.Generator(np.random.Philox(key=stream_key, counter=block << 192))


def duration_to_samples(duration_ms, duration_range_ms, sample_rate):
    """Quantize a region duration to samples, staying inside the duration range"""
    lo_n = int(math.ceil(duration_range_ms[0] * sample_rate / 1000.0 - 1e-9))
    hi_n = int(math.floor(duration_range_ms[1] * sample_rate / 1000.0 + 1e-9))
    n = int(round(duration_ms * sample_rate / 1000.0))
    if lo_n <= hi_n:
        n = min(max(n, lo_n), hi_n)
    return n


def _overlaps(start, length, regions):
    for other in regions:
        if start < other.start_sample + other.length_samples and other.start_sample < start + length:
            return True
    return False


def _sample_regions(spec, rng, buf_len, sample_rate):
    """
    Draw attenuation regions by rejection sampling
    Returns (regions, note); note explains a disabled or shortened draw
    """
    att = spec.attenuation
    count = int(rng.integers(1, att.max_regions + 1))
    # fixed-size draws keep the stream aligned whatever the durations are
    gains = rng.uniform(att.gain_range[0], att.gain_range[1], size=att.max_regions)
    durations = rng.uniform(att.duration_range_ms[0], att.duration_range_ms[1], size=att.max_regions)
    placements = rng.random(size=att.max_regions + MAX_PLACEMENT_RETRIES)

    min_len = duration_to_samples(att.duration_range_ms[0], att.duration_range_ms, sample_rate)
    if min_len < 1:
        return [], 'attenuation disabled: zero-length regions'
    if buf_len < min_len:
        return [], 'attenuation disabled: buffer shorter than minimum region'

    regions = []
    cursor = 0
    retries = 0
    for index in range(count):
        length = duration_to_samples(durations[index], att.duration_range_ms, sample_rate)
        if length > buf_len:
            continue
        while retries <= MAX_PLACEMENT_RETRIES and cursor < placements.shape[0]:
            start = int(placements[cursor] * (buf_len - length + 1))
            cursor += 1
            if not _overlaps(start, length, regions):
                regions.append(AttenuationRegion(start, length, float(gains[index])))
                break
            retries += 1
        if retries > MAX_PLACEMENT_RETRIES:
            break

    regions.sort(key=lambda r: r.start_sample)
    note = None
    if len(regions) < count:
        note = f'placed {len(regions)} of {count} regions'
    return regions, note


def sample_applied(spec, item_index, buf_len, sample_rate):
    """
    Draw the degradation for one corpus item
    Deterministic in (spec, item_index); each factor has its own RNG stream
    """
    key = item_stream_key(spec.seed, item_index)
    applied = AppliedDegradation(seed_used=key, clip_mode=spec.clip.mode,
                                 chain_order=tuple(spec.chain_order))

    rng = factor_rng(key, 'clip')
    enabled = rng.random() < spec.clip.enabled_prob
    ratio = float(rng.uniform(*spec.clip.ratio_range))
    if enabled:
        applied.clip_ratio = ratio

    rng = factor_rng(key, 'lpf')
    enabled = rng.random() < spec.lpf.enabled_prob
    cutoff = float(rng.uniform(*spec.lpf.cutoff_range_hz))
    if enabled:
        applied.lpf_cutoff_hz = cutoff

    rng = factor_rng(key, 'attenuation')
    enabled = rng.random() < spec.attenuation.enabled_prob
    if enabled:
        regions, note = _sample_regions(spec, rng, buf_len, sample_rate)
        applied.attenuation_regions = regions
        applied.attenuation_note = note
        if note:
            logger.debug("item %d: %s", item_index, note)

    rng = factor_rng(key, 'noise')
    if spec.noise.snr_set_db is not None:
        choices = spec.noise.snr_set_db
        applied.snr_db = float(choices[int(rng.integers(len(choices)))])
    else:
        applied.snr_db = float(rng.uniform(*spec.noise.snr_range_db))
    applied.noise_offset_frac = float(rng.random())
    return applied


def crop_noise(noise, length, offset=0):
    """Take `length` noise samples from `offset`; short noise is looped"""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[0] == 0:
        raise DegenerateReferenceError()
    if noise.shape[0] < length:
        return np.resize(noise, length)
    offset = min(max(int(offset), 0), noise.shape[0] - length)
    return noise[offset:offset + length]


def noise_offset(offset_frac, noise_len, speech_len):
    """Map a drawn fraction to a crop offset"""
    if noise_len <= speech_len:
        return 0
    return int(offset_frac * (noise_len - speech_len + 1))


def mix_noise_at_snr(speech, noise, snr_db, offset=0):
    """
    Scale noise to the requested SNR against `speech` and add it
    Returns (mixture, scaled_noise); the sum is not renormalized
    """
    if speech.sample_rate != noise.sample_rate:
        raise DataError(f"sample rate mismatch: {speech.sample_rate} vs {noise.sample_rate} Hz")
    segment = crop_noise(noise.samples, len(speech), offset)
    speech_rms = rms(speech.samples)
    noise_rms = rms(segment)
    if speech_rms == 0.0 or noise_rms == 0.0:
        raise DegenerateReferenceError()
    scale = speech_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    scaled = segment * scale
    return speech.with_samples(speech.samples + scaled), speech.with_samples(scaled)


def clip_at(buf, threshold):
    """Clamp every sample to [-threshold, threshold]"""
    return buf.with_samples(np.clip(buf.samples, -threshold, threshold))


def clip_threshold(buf, ratio, mode='peak'):
    """Resolve a clipping ratio to an absolute threshold, None for silence"""
    if mode == 'absolute':
        return ratio
    peak = float(np.max(np.abs(buf.samples))) if len(buf) else 0.0
    if peak == 0.0:
        return None
    return ratio * peak


def clip_signal(buf, ratio, mode='peak'):
    """
    Limit the dynamic range of the amplitude
    In peak mode the threshold is ratio times the utterance peak
    """
    if not ratio > 0 or (mode == 'peak' and ratio > 1):
        raise DataError(f"clip ratio out of range: {ratio}")
    if mode not in CLIP_MODES:
        raise DataError(f"unknown clip mode '{mode}'")
    threshold = clip_threshold(buf, ratio, mode)
    if threshold is None:
        return buf.with_samples(buf.samples.copy())
    return clip_at(buf, threshold)


def lowpass_degrade(buf, cutoff_hz):
    """Band-limit a buffer; cutoffs above 0.45 fs are clamped"""
    effective = min(float(cutoff_hz), MAX_CUTOFF_FRACTION * buf.sample_rate)
    return apply_fir(buf, design_lowpass(effective, buf.sample_rate))


def attenuate_regions(buf, regions):
    """Multiply each region by its gain; samples outside regions are untouched"""
    regions = [r if isinstance(r, AttenuationRegion) else AttenuationRegion.from_dict(r)
               for r in regions]
    ordered = sorted(regions, key=lambda r: r.start_sample)
    previous_end = 0
    for region in ordered:
        end = region.start_sample + region.length_samples
        if (region.start_sample < previous_end or region.length_samples < 0
                or end > len(buf) or not math.isfinite(region.gain)):
            raise InvalidRegionError()
        previous_end = end

    out = buf.samples.copy()
    for region in ordered:
        out[region.start_sample:region.start_sample + region.length_samples] *= region.gain
    return buf.with_samples(out)


def apply_chain(speech, noise, applied):
    """
    Degrade speech with the drawn factors, then add noise
    The SNR is referenced to the clean speech
    """
    if speech.sample_rate != noise.sample_rate:
        raise DataError(f"sample rate mismatch: {speech.sample_rate} vs {noise.sample_rate} Hz")

    degraded = speech
    for factor in applied.chain_order:
        if factor == 'attenuation' and applied.attenuation_regions:
            degraded = attenuate_regions(degraded, applied.attenuation_regions)
        elif factor == 'clip' and applied.clip_ratio is not None:
            degraded = clip_signal(degraded, applied.clip_ratio, mode=applied.clip_mode)
        elif factor == 'lpf' and applied.lpf_cutoff_hz is not None:
            degraded = lowpass_degrade(degraded, applied.lpf_cutoff_hz)

    offset = noise_offset(applied.noise_offset_frac, len(noise), len(speech))
    _, scaled_noise = mix_noise_at_snr(speech, noise, applied.snr_db, offset)
    return AudioBuffer(degraded.samples + scaled_noise.samples, speech.sample_rate)
