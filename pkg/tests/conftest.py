import hypothesis
import numpy as np
import pytest

from src.audio import AudioBuffer
from src.synth import noise, speech_like, write_synthetic_corpus

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("ci")

RATE = 16000


@pytest.fixture
def speech():
    return speech_like(2.0, RATE, seed=1)


@pytest.fixture
def white():
    return noise(3.0, RATE, seed=2, kind='white')


@pytest.fixture
def tone():
    t = np.arange(RATE) / RATE
    return AudioBuffer(0.5 * np.sin(2 * np.pi * 440.0 * t), RATE)


@pytest.fixture
def corpus_dirs(tmp_path):
    """Four 1.5 s synthetic utterances and two noise files"""
    return write_synthetic_corpus(tmp_path / 'data', items=4, duration_s=1.5, seed=9)
