import numpy as np
import pytest
import torch

from bstkit.data import N_BONES, N_JOINTS
from bstkit.model import ModelConfig


def make_batch(seed, b, length, n_padded=0, dtype=torch.float32):
    """Random model inputs with right-padded masks, as produced by ingest."""
    gen = torch.Generator().manual_seed(seed)

    def r(*shape):
        return torch.randn(*shape, generator=gen, dtype=dtype)

    mask = torch.zeros(b, length, dtype=torch.bool)
    mask[:, : length - n_padded] = True
    keep = mask.to(dtype)
    joints = r(b, 2, length, N_JOINTS, 2) * keep[:, None, :, None, None]
    bones = r(b, 2, length, N_BONES, 2) * keep[:, None, :, None, None]
    shuttle = r(b, length, 2) * keep[:, :, None]
    positions = r(b, 2, length, 2) * keep[:, None, :, None]
    return joints, bones, shuttle, positions, mask


@pytest.fixture
def tiny_config():
    return ModelConfig(
        seq_len=6,
        n_classes=3,
        variant="BST-CG-AP",
        d_model=8,
        d_attn=4,
        n_heads=2,
        tcn_channels=(4, 8),
        dropout=0.0,
    )


def seeded_rng(seed=0):
    return np.random.default_rng(seed)
