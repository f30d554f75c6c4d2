# restobench: degraded-speech corpora, restorer evaluation and experiment sweeps
__version__ = "0.1.0"
