"""
Experiment harness
Builds degraded corpora, runs restorers over them, evaluates the results and
drives the matrix, attenuation-length and SNR-grid protocols
"""
import copy
import json
import logging
import os
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from tqdm import tqdm

from src import __version__
from src.audio import read_wav, write_wav
from src.baselines import BUILTINS, run_builtin
from src.degrade import (
    NOISE_FREE_SNR_DB,
    AppliedDegradation,
    DegradationSpec,
    NoiseSpec,
    apply_chain,
    sample_applied,
)
from src.dsp import resample
from src.errors import (
    DataError,
    NoInputItemsError,
    RestobenchError,
    UsageError,
)
from src.metrics import MetricReport, compute_item_metrics, improvement_delta

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = 'manifest.json'
DEFAULT_TIMEOUT_S = 60.0

EXPERIMENT_KINDS = ('matrix', 'attenuation_sweep', 'snr_sweep')
MATRIX_COLUMNS = ('Noise', 'Clip', 'LPF', 'Att.', 'All')
_COLUMN_ALIASES = {name.lower().rstrip('.'): name for name in MATRIX_COLUMNS}

# Salt separating the noise-assignment shuffle from per-item streams
_NOISE_SHUFFLE_SALT = 0x6E6F697365


def default_attenuation_lengths():
    return [float(v) for v in range(0, 201, 25)]


def default_snr_grid():
    return [round(v, 6) for v in np.linspace(-2.5, 17.5, 9).tolist()]


def _wav_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() == '.wav')


def _relative(path, root):
    path = Path(path).resolve()
    try:
        return path.relative_to(Path(root).resolve()).as_posix()
    except ValueError:
        return str(path)


def _map_items(func, args, jobs, desc):
    """Run `func` over `args` on a thread pool; results keep input order"""
    jobs = max(1, int(jobs or os.cpu_count() or 1))
    with tqdm(total=len(args), desc=desc, disable=None, leave=False) as progress:
        if jobs == 1:
            results = []
            for arg in args:
                results.append(func(arg))
                progress.update(1)
            return results
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = []
            for result in executor.map(func, args):
                results.append(result)
                progress.update(1)
            return results


@dataclass
class ManifestItem:
    item_id: str
    clean_path: str
    noise_path: str
    degraded_path: Optional[str] = None
    restored_path: Optional[str] = None
    applied: Optional[AppliedDegradation] = None
    status: str = 'ok'
    failure_stage: Optional[str] = None
    reason: Optional[str] = None

    @property
    def ok(self):
        return self.status == 'ok'

    def failed(self, stage, reason):
        """Copy of this item marked as failed"""
        return replace(self, status='failed', failure_stage=stage, reason=reason)

    def to_dict(self):
        return {
            'item_id': self.item_id,
            'clean_path': self.clean_path,
            'noise_path': self.noise_path,
            'degraded_path': self.degraded_path,
            'restored_path': self.restored_path,
            'applied': self.applied.to_dict() if self.applied is not None else None,
            'status': self.status,
            'failure_stage': self.failure_stage,
            'reason': self.reason,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get('applied') is not None:
            data['applied'] = AppliedDegradation.from_dict(data['applied'])
        return cls(**data)


@dataclass
class Manifest:
    """
    Corpus record set
    In-corpus paths are stored relative to the manifest's directory
    """
    items: List[ManifestItem]
    spec: DegradationSpec
    created_utc: str = ''
    tool_version: str = __version__
    schema_version: int = MANIFEST_SCHEMA_VERSION
    root: Path = field(default=Path('.'), compare=False)

    @property
    def path(self):
        return self.root / MANIFEST_NAME

    def resolve(self, path):
        """Absolute location of a path recorded in the manifest"""
        if path is None:
            return None
        path = Path(path)
        return path if path.is_absolute() else self.root / path

    def ok_items(self):
        return [item for item in self.items if item.ok]

    def failed_items(self, stage=None):
        return [item for item in self.items
                if not item.ok and (stage is None or item.failure_stage == stage)]

    def to_dict(self):
        return {
            'schema_version': self.schema_version,
            'tool_version': self.tool_version,
            'created_utc': self.created_utc,
            'spec': self.spec.to_dict(),
            'items': [item.to_dict() for item in self.items],
        }

    def save(self, path=None):
        path = Path(path) if path is not None else self.path
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(self.to_dict(), handle, indent=2)
            handle.write('\n')
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot read manifest ({exc})") from exc
        ids = [item['item_id'] for item in data['items']]
        if len(set(ids)) != len(ids):
            raise DataError(f"{path}: duplicate item ids")
        return cls(
            items=[ManifestItem.from_dict(item) for item in data['items']],
            spec=DegradationSpec.from_dict(data['spec']),
            created_utc=data.get('created_utc', ''),
            tool_version=data.get('tool_version', ''),
            schema_version=data.get('schema_version', MANIFEST_SCHEMA_VERSION),
            root=path.parent,
        )


@dataclass
class SweepPoint:
    value: Union[float, str]
    report: MetricReport

    def to_dict(self):
        return {'value': self.value, 'report': self.report.to_dict()}


@dataclass
class SweepResult:
    """One report per sweep value (or matrix column)"""
    kind: str
    points: List[SweepPoint]
    enhancer: str = ''

    def values(self):
        return [point.value for point in self.points]

    def means(self, metric, deltas=False):
        reports = [p.report.deltas if deltas else p.report for p in self.points]
        return [r.mean(metric) for r in reports]

    def to_dict(self):
        return {'kind': self.kind, 'enhancer': self.enhancer,
                'points': [point.to_dict() for point in self.points]}

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data['kind'], enhancer=data.get('enhancer', ''),
                   points=[SweepPoint(p['value'], MetricReport.from_dict(p['report']))
                           for p in data['points']])


def _check_increasing(values, name):
    if not values:
        raise UsageError(f"{name}: must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError(f"{name}: must be strictly increasing")


def normalize_column(name):
    key = str(name).lower().rstrip('.')
    if key not in _COLUMN_ALIASES:
        raise UsageError(f"unknown matrix column '{name}' (expected one of {list(MATRIX_COLUMNS)})")
    return _COLUMN_ALIASES[key]


@dataclass
class ExperimentConfig:
    kind: str
    base_spec: DegradationSpec = field(default_factory=DegradationSpec)
    enhancer: str = 'passthrough'
    matrix: List[str] = field(default_factory=lambda: list(MATRIX_COLUMNS))
    attenuation_lengths_ms: List[float] = field(default_factory=default_attenuation_lengths)
    snr_grid_db: List[float] = field(default_factory=default_snr_grid)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise UsageError(f"experiment kind must be one of {EXPERIMENT_KINDS}, got '{self.kind}'")
        self.matrix = [normalize_column(c) for c in self.matrix]
        if not self.matrix or len(set(self.matrix)) != len(self.matrix):
            raise UsageError("matrix: need a non-empty set of columns")
        self.attenuation_lengths_ms = [float(v) for v in self.attenuation_lengths_ms]
        self.snr_grid_db = [float(v) for v in self.snr_grid_db]
        _check_increasing(self.attenuation_lengths_ms, 'attenuation_lengths_ms')
        _check_increasing(self.snr_grid_db, 'snr_grid_db')
        if any(v < 0 for v in self.attenuation_lengths_ms):
            raise UsageError("attenuation_lengths_ms: lengths must be non-negative")

    @classmethod
    def from_dict(cls, data, spec_loader=None):
        """
        Parse an experiment config
        `base_spec` may be an inline spec object or a name handed to spec_loader
        """
        allowed = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise UsageError(f"experiment config: unknown field(s) {', '.join(unknown)}")
        data = dict(data)
        base = data.get('base_spec')
        if isinstance(base, str):
            if spec_loader is None:
                raise UsageError("experiment config names a base spec but no loader was given")
            data['base_spec'] = spec_loader(base)
        elif isinstance(base, dict):
            data['base_spec'] = DegradationSpec.from_dict(base)
        if 'kind' not in data:
            raise UsageError("experiment config: missing 'kind'")
        return cls(**data)


def _build_item(task):
    index, item_id, clean_path, noise_path, spec, out_dir = task
    item = ManifestItem(item_id=item_id, clean_path=str(clean_path), noise_path=str(noise_path))
    try:
        speech = read_wav(clean_path)
        noise = read_wav(noise_path)
        if noise.sample_rate != speech.sample_rate:
            logger.info("%s: resampling noise %s from %d to %d Hz", item_id, noise_path.name,
                        noise.sample_rate, speech.sample_rate)
            noise = resample(noise, speech.sample_rate)

        applied = sample_applied(spec, index, len(speech), speech.sample_rate)
        applied.noise_source = noise_path.name
        degraded = apply_chain(speech, noise, applied)

        wav_path = out_dir / 'degraded' / f'{item_id}.wav'
        write_wav(degraded, wav_path)
        with open(wav_path.with_suffix('.json'), 'w', encoding='utf-8') as handle:
            json.dump(dict(item_id=item_id, **applied.to_dict()), handle, indent=2)
            handle.write('\n')
        logger.debug("built %s", item_id)
        return replace(item, degraded_path=_relative(wav_path, out_dir), applied=applied)
    except (RestobenchError, OSError) as exc:
        logger.warning("skipping %s: %s", item_id, exc)
        return item.failed('build', str(exc))


def build_corpus(clean_dir, noise_dir, spec, out_dir, jobs=None):
    """
    Degrade every clean WAV in `clean_dir` with noise from `noise_dir`
    Noise files are assigned round-robin over a seeded shuffle
    """
    clean_files = _wav_files(clean_dir)
    if not clean_files:
        raise NoInputItemsError(f"no input items in {clean_dir}")
    noise_files = _wav_files(noise_dir)
    if not noise_files:
        raise NoInputItemsError(f"no input items in {noise_dir}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    shuffle = np.random.Generator(np.random.Philox(key=spec.seed ^ _NOISE_SHUFFLE_SALT))
    order = shuffle.permutation(len(noise_files))

    tasks = []
    seen = set()
    for index, clean_path in enumerate(clean_files):
        item_id = clean_path.stem
        if item_id in seen:
            item_id = f'{item_id}_{index}'
        seen.add(item_id)
        noise_path = noise_files[order[index % len(noise_files)]]
        tasks.append((index, item_id, clean_path.resolve(), noise_path.resolve(), spec, out_dir))

    items = _map_items(_build_item, tasks, jobs, 'degrade')
    manifest = Manifest(
        items=items,
        spec=spec,
        created_utc=datetime.now(timezone.utc).isoformat(timespec='seconds'),
        root=out_dir,
    )
    manifest.save()
    failed = len(manifest.failed_items())
    logger.info("built corpus in %s: %d items, %d skipped", out_dir, len(items) - failed, failed)
    return manifest


def _enhance_builtin(task):
    name, item, manifest, out_dir = task
    try:
        degraded = read_wav(manifest.resolve(item.degraded_path))
        clean = read_wav(item.clean_path) if BUILTINS[name][1] else None
        restored = run_builtin(name, degraded, clean)
        path = out_dir / f'{item.item_id}.wav'
        write_wav(restored, path)
        return replace(item, restored_path=_relative(path, manifest.root))
    except (RestobenchError, OSError) as exc:
        logger.warning("%s failed on %s: %s", name, item.item_id, exc)
        return item.failed('enhance', str(exc))


def _collect_adapter_output(task):
    item, manifest, out_dir = task
    path = out_dir / f'{item.item_id}.wav'
    if not path.is_file():
        return item.failed('enhance', 'missing output')
    try:
        restored = read_wav(path)
        degraded = read_wav(manifest.resolve(item.degraded_path))
    except (RestobenchError, OSError) as exc:
        return item.failed('enhance', f'unreadable output: {exc}')
    if restored.sample_rate != degraded.sample_rate:
        return item.failed('enhance', 'sample rate mismatch')
    if len(restored) != len(degraded):
        return item.failed('enhance', 'length mismatch')
    return replace(item, restored_path=_relative(path, manifest.root))


def _run_adapter(manifest, command, out_dir, timeout_s, jobs):
    cmd = shlex.split(command) if isinstance(command, str) else list(command)
    if not cmd:
        raise UsageError("empty adapter command")
    pending = manifest.ok_items()
    limit = timeout_s * max(1, len(pending))
    manifest_path = manifest.save()
    logger.info("running adapter %s on %d items (timeout %.0f s)", cmd[0], len(pending), limit)

    try:
        completed = subprocess.run(cmd + [str(manifest_path), str(out_dir)],
                                   capture_output=True, text=True, timeout=limit)
        failure = None
        if completed.returncode != 0:
            failure = f'adapter exited with code {completed.returncode}'
            tail = (completed.stderr or '').strip().splitlines()[-5:]
            for line in tail:
                logger.warning("adapter: %s", line)
    except subprocess.TimeoutExpired:
        failure = f'adapter timed out after {limit:.0f} s'
    except OSError as exc:
        failure = f'adapter could not start: {exc}'

    if failure:
        logger.warning(failure)
        results = {item.item_id: item.failed('enhance', failure) for item in pending}
    else:
        collected = _map_items(_collect_adapter_output,
                               [(item, manifest, out_dir) for item in pending], jobs, 'collect')
        results = {item.item_id: item for item in collected}
    return [results.get(item.item_id, item) for item in manifest.items]


def run_enhancer(manifest, enhancer, out_dir=None, timeout_s=DEFAULT_TIMEOUT_S, jobs=None):
    """
    Restore every item of a corpus
    `enhancer` is a builtin baseline name or an adapter command; the updated
    manifest is saved and returned
    """
    name = enhancer if isinstance(enhancer, str) else ' '.join(enhancer)
    out_dir = Path(out_dir) if out_dir is not None else manifest.root / 'restored'
    out_dir.mkdir(parents=True, exist_ok=True)

    # a previous run's outputs must not leak into this one
    base_items = [replace(item, restored_path=None) if item.ok else item for item in manifest.items]
    manifest = replace(manifest, items=base_items)
    for item in manifest.ok_items():
        (out_dir / f'{item.item_id}.wav').unlink(missing_ok=True)

    if isinstance(enhancer, str) and enhancer in BUILTINS:
        tasks = [(enhancer, item, manifest, out_dir) for item in manifest.ok_items()]
        done = {item.item_id: item for item in _map_items(_enhance_builtin, tasks, jobs, enhancer)}
        items = [done.get(item.item_id, item) for item in manifest.items]
    else:
        items = _run_adapter(manifest, enhancer, out_dir, timeout_s, jobs)

    result = replace(manifest, items=items)
    result.save()
    failed = len(result.failed_items('enhance'))
    logger.info("enhancer %s: %d restored, %d failed", name, len(result.ok_items()), failed)
    return result


def _evaluate_item(task):
    item, manifest = task
    try:
        clean = read_wav(item.clean_path)
        degraded = read_wav(manifest.resolve(item.degraded_path))
        baseline = compute_item_metrics(item.item_id, clean, degraded)
        if item.restored_path is None:
            return baseline, baseline, None
        restored = read_wav(manifest.resolve(item.restored_path))
        return compute_item_metrics(item.item_id, clean, restored), baseline, None
    except (RestobenchError, OSError) as exc:
        logger.warning("cannot evaluate %s: %s", item.item_id, exc)
        return None, None, str(exc)


def evaluate_corpus(manifest, with_deltas=True, jobs=None, label=''):
    """
    Measure restored (or, without restorer output, degraded) audio against clean
    Failed items are excluded from aggregates and listed in the report
    """
    failed = [{'item_id': item.item_id, 'reason': item.reason or 'failed'}
              for item in manifest.failed_items()]
    pending = manifest.ok_items()
    results = _map_items(_evaluate_item, [(item, manifest) for item in pending], jobs, 'evaluate')

    per_item, baseline = [], []
    for item, (metrics, reference, error) in zip(pending, results):
        if error is not None:
            failed.append({'item_id': item.item_id, 'reason': error})
        else:
            per_item.append(metrics)
            baseline.append(reference)

    failed.sort(key=lambda entry: entry['item_id'])
    report = MetricReport(per_item, failed=failed, label=label, tool_version=__version__)
    if with_deltas:
        report = improvement_delta(report, MetricReport(baseline, label='degraded'))
    logger.info("evaluated %d items (%d failed)", len(per_item), len(failed))
    return report


def _run_point(spec, point_dir, clean_dir, noise_dir, enhancer, jobs, timeout_s, label):
    manifest = build_corpus(clean_dir, noise_dir, spec, point_dir, jobs=jobs)
    if enhancer and enhancer != 'none':
        manifest = run_enhancer(manifest, enhancer, timeout_s=timeout_s, jobs=jobs)
    return evaluate_corpus(manifest, with_deltas=True, jobs=jobs, label=label)


def attenuation_point_spec(base_spec, length_ms):
    """Spec with every region exactly `length_ms` long; 0 disables attenuation"""
    spec = copy.deepcopy(base_spec)
    if length_ms <= 0:
        spec.attenuation.enabled_prob = 0.0
    else:
        spec.attenuation.duration_range_ms = (float(length_ms), float(length_ms))
    spec.validate()
    return spec


def snr_point_spec(base_spec, snr_db):
    """Spec with the SNR pinned to one value"""
    spec = copy.deepcopy(base_spec)
    spec.noise = NoiseSpec(snr_set_db=[float(snr_db)], snr_range_db=None)
    spec.validate()
    return spec


def matrix_column_spec(base_spec, column):
    """
    Single-distortion spec for one matrix column
    The named factor is always on; noise-free columns mix at +120 dB
    """
    column = normalize_column(column)
    spec = copy.deepcopy(base_spec)
    spec.clip.enabled_prob = 1.0 if column in ('Clip', 'All') else 0.0
    spec.lpf.enabled_prob = 1.0 if column in ('LPF', 'All') else 0.0
    spec.attenuation.enabled_prob = 1.0 if column in ('Att.', 'All') else 0.0
    if column not in ('Noise', 'All'):
        spec.noise = NoiseSpec(snr_set_db=[NOISE_FREE_SNR_DB], snr_range_db=None)
    spec.validate()
    return spec


def sweep_attenuation(base_spec, lengths_ms, enhancer, clean_dir, noise_dir, work_dir,
                      jobs=None, timeout_s=DEFAULT_TIMEOUT_S):
    """
    Evaluate one corpus per attenuation length
    The master seed is shared so only the region length changes
    """
    _check_increasing(list(lengths_ms), 'attenuation lengths')
    points = []
    for length in lengths_ms:
        spec = attenuation_point_spec(base_spec, length)
        point_dir = Path(work_dir) / f'att_{length:g}ms'
        report = _run_point(spec, point_dir, clean_dir, noise_dir, enhancer, jobs, timeout_s,
                            label=f'attenuation {length:g} ms')
        points.append(SweepPoint(float(length), report))
        logger.info("attenuation %g ms: mean STOI %.4f", length, report.mean('stoi') or float('nan'))
    return SweepResult('attenuation_sweep', points, enhancer=str(enhancer))


def sweep_snr(base_spec, grid_db, enhancer, clean_dir, noise_dir, work_dir,
              jobs=None, timeout_s=DEFAULT_TIMEOUT_S):
    """Evaluate one corpus per SNR, with deltas against the noisy mixture"""
    _check_increasing(list(grid_db), 'SNR grid')
    points = []
    for snr in grid_db:
        spec = snr_point_spec(base_spec, snr)
        point_dir = Path(work_dir) / f'snr_{snr:g}dB'
        report = _run_point(spec, point_dir, clean_dir, noise_dir, enhancer, jobs, timeout_s,
                            label=f'snr {snr:g} dB')
        points.append(SweepPoint(float(snr), report))
    return SweepResult('snr_sweep', points, enhancer=str(enhancer))


def run_matrix(base_spec, columns, enhancer, clean_dir, noise_dir, work_dir,
               jobs=None, timeout_s=DEFAULT_TIMEOUT_S):
    """Evaluate the single-distortion columns and the all-factor column"""
    points = []
    for column in [normalize_column(c) for c in columns]:
        spec = matrix_column_spec(base_spec, column)
        point_dir = Path(work_dir) / f"matrix_{column.rstrip('.').lower()}"
        report = _run_point(spec, point_dir, clean_dir, noise_dir, enhancer, jobs, timeout_s,
                            label=column)
        points.append(SweepPoint(column, report))
    return SweepResult('matrix', points, enhancer=str(enhancer))


class ExperimentRunner:
    def __init__(self, clean_dir, noise_dir, work_dir, jobs=None, timeout_s=DEFAULT_TIMEOUT_S):
        """Initialize the runner with its data and output locations"""
        self.clean_dir = Path(clean_dir)
        self.noise_dir = Path(noise_dir)
        self.work_dir = Path(work_dir)
        self.jobs = jobs
        self.timeout_s = timeout_s

    def run(self, config, seed=None):
        """Run the protocol named by `config.kind`"""
        spec = config.base_spec if seed is None else replace(copy.deepcopy(config.base_spec), seed=seed)
        common = dict(clean_dir=self.clean_dir, noise_dir=self.noise_dir, work_dir=self.work_dir,
                      jobs=self.jobs, timeout_s=self.timeout_s)
        if config.kind == 'attenuation_sweep':
            return sweep_attenuation(spec, config.attenuation_lengths_ms, config.enhancer, **common)
        if config.kind == 'snr_sweep':
            return sweep_snr(spec, config.snr_grid_db, config.enhancer, **common)
        return run_matrix(spec, config.matrix, config.enhancer, **common)
