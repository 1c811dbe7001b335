import numpy as np
import pytest

from xview.encoder import ConvBlock, EncoderConfig
from xview.params import InitSpec


def tiny_encoder_config(in_channels=2, in_h=8, in_w=8, embed_dim=5, seed=1,
                        **overrides) -> EncoderConfig:
    """Two-block stack small enough for exhaustive finite differences."""
    blocks = (ConvBlock(3, kernel=3, stride=2, padding=1),
              ConvBlock(4, kernel=3, stride=2, padding=1))
    return EncoderConfig(in_channels, in_h, in_w, blocks, embed_dim=embed_dim,
                         init=InitSpec("xavier-uniform", seed=seed), **overrides)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
