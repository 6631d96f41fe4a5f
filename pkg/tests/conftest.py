"""
공통 fixture: 8x8x2 입력, conv 3x3 -> 4 (pool 2), fc -> 3, l = 5, C = 0.05
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from diagnostics import sample_params_away_from_kinks, synthetic_dataset  # noqa: E402
from model_config import LayerSpec, ModelConfig, parse_config_text  # noqa: E402
from network import Network  # noqa: E402

TINY_CONFIG_TEXT = """\
input height=8 width=8 channels=2
conv h=3 out=4 pool=2
fc out=3
"""

TINY_C = 0.05


@pytest.fixture
def tiny_config() -> ModelConfig:
    return parse_config_text(TINY_CONFIG_TEXT)


@pytest.fixture
def tiny_network(tiny_config) -> Network:
    return Network(tiny_config)


@pytest.fixture
def tiny_dataset():
    return synthetic_dataset((8, 8, 2), 3, 5, seed=1)


@pytest.fixture
def tiny_theta(tiny_network, tiny_dataset) -> np.ndarray:
    return sample_params_away_from_kinks(tiny_network, tiny_dataset, seed=3)


@pytest.fixture
def padded_network() -> Network:
    """pad와 stride, 두 번째 conv, 은닉 fc까지 쓰는 네트워크"""
    config = ModelConfig(
        input_dims=(7, 6, 1),
        layers=(
            LayerSpec.conv(3, 3, stride=1, pad=1, pool=2),
            LayerSpec.conv(2, 2, stride=1, pad=0),
            LayerSpec.fc(4),
            LayerSpec.fc(2),
        ),
    )
    return Network(config)


@pytest.fixture
def configs_dir() -> str:
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
