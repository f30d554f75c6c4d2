#!/usr/bin/env python3
"""
restobench - Main Entry Point

Deterministic speech-restoration benchmarking: build degraded corpora, run
restorers over them, score them and sweep the degradation parameters.

Commands:
- degrade: clean + noise directories and a spec -> degraded corpus
- enhance: corpus -> restored audio (builtin baseline or adapter command)
- evaluate: corpus -> STOI / segSNR / LSD report
- sweep-att, sweep-snr, matrix: experiment protocols
- features: FEAT1 feature utilities
- selftest: invariant checks on synthetic audio
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
