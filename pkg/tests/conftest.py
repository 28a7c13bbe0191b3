import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from flowe.synthvid.scene import SynthConfig
from flowe.network.model import init_params, default_arch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_synth():
    """小画布、少片段、无超采样的合成数据配置"""
    return SynthConfig(canvas=(16, 32), num_shapes=2, episodes=4, frames_per_episode=3,
                       size_range=(3.0, 5.0), max_speed=1.0, supersample=1)


@pytest.fixture
def params(rng):
    return init_params(rng, default_arch())


@pytest.fixture
def linear_field():
    """在双线性插值下精确的线性场"""
    def make(shape, coeffs=((2.0, -1.0, 3.0), (0.5, 1.0, 0.0))):
        ys, xs = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
        return np.stack([a * xs + b * ys + c for a, b, c in coeffs])
    return make
