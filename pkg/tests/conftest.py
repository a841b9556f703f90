import numpy as np
import pytest
import torch

from enhcodec.signal import Waveform


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_waveform(rng):
    def make(n=4096, sample_rate=24000, scale=0.5):
        return Waveform(rng.uniform(-scale, scale, n), sample_rate)

    return make
