"""
Command line for restobench
Dispatches corpus generation, enhancement, evaluation, sweeps, feature
utilities and the self-test, and maps errors to exit codes
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

from src import __version__
from src.baselines import BUILTINS
from src.conditioning import (
    LayerWeights,
    concat_features,
    load_features,
    repeat_frames_to,
    store_features,
    weighted_layer_average,
)
from src.degrade import DEFAULT_SEED
from src.errors import AdapterError, DataError, RestobenchError, UsageError
from src.harness import (
    DEFAULT_TIMEOUT_S,
    ExperimentRunner,
    Manifest,
    build_corpus,
    evaluate_corpus,
    run_enhancer,
)
from src.presets import PresetManager
from src.report_writer import emit_report
from src.selftest import run_selftest

logger = logging.getLogger(__name__)

LOG_ENV = 'RESTOBENCH_LOG'
LOG_LEVELS = {'error': logging.ERROR, 'warn': logging.WARNING,
              'info': logging.INFO, 'debug': logging.DEBUG}
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
DEFAULT_SPEC = 'paper-default'


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def setup_logging():
    """Configure the root logger from RESTOBENCH_LOG"""
    value = os.environ.get(LOG_ENV, 'warn').strip().lower()
    level = LOG_LEVELS.get(value)
    logging.basicConfig(level=level or logging.WARNING, format=LOG_FORMAT, stream=sys.stderr,
                        force=True)
    if level is None:
        logger.warning("%s=%s not understood, using warn", LOG_ENV, value)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text}")
    return value


def _seed(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}")
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits: {text}")
    return value


def _float_list(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}")


def _add_jobs(parser):
    parser.add_argument('--jobs', type=_positive_int, default=None,
                        help='worker threads (default: all cores)')


def _add_timeout(parser):
    parser.add_argument('--timeout', type=float, default=DEFAULT_TIMEOUT_S,
                        help='adapter timeout per item in seconds (default: %(default)s)')


def _add_experiment(parser, default_config):
    parser.add_argument('--config', default=default_config,
                        help='experiment config file or preset (default: %(default)s)')
    parser.add_argument('--clean', required=True, help='directory of clean WAVs')
    parser.add_argument('--noise', required=True, help='directory of noise WAVs')
    parser.add_argument('--work', required=True, help='directory for the per-point corpora')
    parser.add_argument('--out', default=None, help='report directory (default: --work)')
    parser.add_argument('--enhancer', default=None, help='builtin name or adapter command')
    parser.add_argument('--seed', type=_seed, default=None)
    _add_jobs(parser)
    _add_timeout(parser)


def build_parser():
    parser = ArgumentParser(prog='restobench',
                            description='Speech restoration benchmarking toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', metavar='command', parser_class=ArgumentParser)
    commands.required = True

    degrade = commands.add_parser('degrade', help='build a degraded corpus')
    degrade.add_argument('--clean', required=True, help='directory of clean WAVs')
    degrade.add_argument('--noise', required=True, help='directory of noise WAVs')
    degrade.add_argument('--spec', default=DEFAULT_SPEC,
                         help='degradation spec file or preset (default: %(default)s)')
    degrade.add_argument('--seed', type=_seed, default=None,
                         help=f'master seed (overrides the spec; default {DEFAULT_SEED})')
    degrade.add_argument('--out', required=True, help='corpus directory')
    _add_jobs(degrade)

    enhance = commands.add_parser('enhance', help='restore a corpus')
    enhance.add_argument('--manifest', required=True)
    which = enhance.add_mutually_exclusive_group(required=True)
    which.add_argument('--builtin', choices=sorted(BUILTINS))
    which.add_argument('--adapter', help='command invoked as <cmd> <manifest.json> <out_dir>')
    enhance.add_argument('--out', default=None, help='output directory (default: <corpus>/restored)')
    _add_jobs(enhance)
    _add_timeout(enhance)

    evaluate = commands.add_parser('evaluate', help='score a corpus against its clean speech')
    evaluate.add_argument('--manifest', required=True)
    evaluate.add_argument('--out', default=None, help='report directory (default: the corpus)')
    evaluate.add_argument('--format', choices=('json', 'csv', 'both'), default='both')
    evaluate.add_argument('--no-deltas', action='store_true',
                          help='skip improvement over the degraded condition')
    _add_jobs(evaluate)

    sweep_att = commands.add_parser('sweep-att', help='sweep attenuation region length')
    _add_experiment(sweep_att, 'sweep-att')
    sweep_att.add_argument('--lengths', type=_float_list, default=None,
                           help='comma-separated lengths in ms')

    sweep_snr = commands.add_parser('sweep-snr', help='sweep the mixing SNR')
    _add_experiment(sweep_snr, 'sweep-snr')
    sweep_snr.add_argument('--grid', type=_float_list, default=None,
                           help='comma-separated SNRs in dB')

    matrix = commands.add_parser('matrix', help='single-distortion matrix')
    _add_experiment(matrix, 'matrix')

    features = commands.add_parser('features', help='FEAT1 feature utilities')
    actions = features.add_subparsers(dest='action', metavar='action', parser_class=ArgumentParser)
    actions.required = True
    inspect = actions.add_parser('inspect', help='print the header of a FEAT1 file')
    inspect.add_argument('path')
    average = actions.add_parser('average', help='softmax-weighted layer average')
    average.add_argument('path')
    logits = average.add_mutually_exclusive_group(required=True)
    logits.add_argument('--logits', type=_float_list, help='comma-separated layer logits')
    logits.add_argument('--logits-file', help='JSON list of layer logits')
    average.add_argument('--out', required=True)
    repeat = actions.add_parser('repeat', help='repeat frames to a target count')
    repeat.add_argument('path')
    repeat.add_argument('--frames', type=_positive_int, required=True)
    repeat.add_argument('--rate', type=float, required=True, help='target frame rate in Hz')
    repeat.add_argument('--out', required=True)
    concat = actions.add_parser('concat', help='concatenate two single-layer streams')
    concat.add_argument('first')
    concat.add_argument('second')
    concat.add_argument('--out', required=True)

    commands.add_parser('selftest', help='run the invariant checks on synthetic audio')
    return parser


def cmd_degrade(args, presets):
    spec = presets.load_spec(args.spec, seed=args.seed)
    manifest = build_corpus(args.clean, args.noise, spec, args.out, jobs=args.jobs)
    print(f"{len(manifest.ok_items())} items written to {manifest.path}")
    return 0


def cmd_enhance(args, presets):
    manifest = Manifest.load(args.manifest)
    enhancer = args.builtin or args.adapter
    result = run_enhancer(manifest, enhancer, out_dir=args.out, timeout_s=args.timeout, jobs=args.jobs)
    failed = result.failed_items('enhance')
    if failed:
        raise AdapterError(f"{len(failed)} of {len(result.items)} items failed enhancement "
                           f"(first: {failed[0].item_id}: {failed[0].reason})")
    print(f"{len(result.ok_items())} items restored")
    return 0


def _emit(result, out_dir, stem, formats):
    out_dir = Path(out_dir)
    for fmt in formats:
        path = emit_report(result, fmt, out_dir / f'{stem}.{fmt}')
        print(path)


def cmd_evaluate(args, presets):
    manifest = Manifest.load(args.manifest)
    report = evaluate_corpus(manifest, with_deltas=not args.no_deltas, jobs=args.jobs,
                             label=manifest.root.name)
    formats = ('json', 'csv') if args.format == 'both' else (args.format,)
    _emit(report, args.out or manifest.root, 'report', formats)
    if report.failed:
        logger.warning("%d items failed and are excluded from the aggregate", len(report.failed))
    return 0


def _experiment(args, presets, stem, overrides):
    config = presets.load_experiment(args.config)
    if args.enhancer:
        config.enhancer = args.enhancer
    for name, value in overrides.items():
        if value is not None:
            setattr(config, name, value)
    config.validate()
    runner = ExperimentRunner(args.clean, args.noise, args.work, jobs=args.jobs,
                              timeout_s=args.timeout)
    result = runner.run(config, seed=args.seed)
    _emit(result, args.out or args.work, stem, ('json', 'csv'))
    return 0


def cmd_sweep_att(args, presets):
    return _experiment(args, presets, 'sweep-att', {'attenuation_lengths_ms': args.lengths})


def cmd_sweep_snr(args, presets):
    return _experiment(args, presets, 'sweep-snr', {'snr_grid_db': args.grid})


def cmd_matrix(args, presets):
    return _experiment(args, presets, 'matrix', {})


def cmd_features(args, presets):
    if args.action == 'inspect':
        fm = load_features(args.path)
        print(json.dumps({'layers': fm.layers, 'frames': fm.frames, 'dim': fm.dim,
                          'frame_rate_hz': fm.frame_rate_hz}))
        return 0
    if args.action == 'average':
        if args.logits_file:
            with open(args.logits_file, 'r', encoding='utf-8') as handle:
                logits = json.load(handle)
        else:
            logits = args.logits
        result = weighted_layer_average(load_features(args.path), LayerWeights(logits))
    elif args.action == 'repeat':
        result = repeat_frames_to(load_features(args.path), args.frames, args.rate)
    else:
        result = concat_features(load_features(args.first), load_features(args.second))
    store_features(result, args.out)
    print(args.out)
    return 0


def cmd_selftest(args, presets):
    results = run_selftest()
    for result in results:
        status = 'ok' if result.passed else 'FAIL'
        print(f"{status:4} {result.name}" + (f"  ({result.detail})" if result.detail else ''))
    failed = [r for r in results if not r.passed]
    if failed:
        raise DataError(f"{len(failed)} self-test check(s) failed")
    return 0


COMMANDS = {
    'degrade': cmd_degrade,
    'enhance': cmd_enhance,
    'evaluate': cmd_evaluate,
    'sweep-att': cmd_sweep_att,
    'sweep-snr': cmd_sweep_snr,
    'matrix': cmd_matrix,
    'features': cmd_features,
    'selftest': cmd_selftest,
}


def main(argv=None):
    """Entry point; returns the process exit code"""
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, PresetManager())
    except RestobenchError as exc:
        print(f"restobench: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"restobench: {exc}", file=sys.stderr)
        return DataError.exit_code
