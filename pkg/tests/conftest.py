import numpy as np
import pytest
import torch

from hgqdet.model import ModelConfig


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(
        backbone="tiny-cnn",
        d=32,
        num_queries=12,
        num_layers=2,
        n_head=4,
        ffn_dim=64,
        c4_heads=4,
        tiny_channels=(8, 16, 32, 64),
        input_size=(64, 64),
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_model_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def random_boxes(rng, n, lo=0.02, hi=0.4):
    """Valid normalized boxes fully inside the unit square."""
    w = rng.uniform(lo, hi, n)
    h = rng.uniform(lo, hi, n)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.stack([cx, cy, w, h], axis=1)
