"""
Builtin restorers behind the external enhancer protocol
Usage: python -m src.adapter <builtin> <manifest.json> <out_dir>
Writes <out_dir>/<item_id>.wav for every buildable item and exits 0
"""
import logging
import sys
from pathlib import Path

from src.audio import read_wav, write_wav
from src.baselines import BUILTINS, run_builtin
from src.cli import setup_logging
from src.errors import RestobenchError
from src.harness import Manifest

logger = logging.getLogger(__name__)


def run_adapter(name, manifest_path, out_dir):
    """Restore every item of a manifest with a builtin; returns the item count written"""
    manifest = Manifest.load(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    needs_clean = BUILTINS[name][1] if name in BUILTINS else False
    written = 0
    for item in manifest.ok_items():
        degraded = read_wav(manifest.resolve(item.degraded_path))
        clean = read_wav(item.clean_path) if needs_clean else None
        write_wav(run_builtin(name, degraded, clean), out_dir / f'{item.item_id}.wav')
        written += 1
    return written


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 3:
        print(__doc__.strip(), file=sys.stderr)
        return 1
    setup_logging()
    try:
        run_adapter(*argv)
    except RestobenchError as exc:
        print(f"adapter: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
