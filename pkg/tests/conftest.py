import numpy as np
import pytest

from cfcw import sim


@pytest.fixture
def array():
    return sim.default_array()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def line_phase(cap, f=7e3, mic=0, start=0.05, length=0.1):
    """Phase of the f line on one channel over a quiet stretch (absolute-time reference)."""
    fs = cap.sample_rate
    a, b = int(start * fs), int((start + length) * fs)
    n = np.arange(a, b) + cap.start_time * fs
    x = cap.channels[mic, a:b]
    return np.angle(np.sum(x * np.exp(-2j * np.pi * f * n / fs)))
