"""
Shared fixtures: seeded generators, fixture masks, small model configs.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import mask_ops  # noqa: E402
from config import SLOW_TESTS, ModelConfig  # noqa: E402


def pytest_collection_modifyitems(config, items):
    if SLOW_TESTS:
        return
    skip = pytest.mark.skip(reason="set SHADOWMAMBA_SLOW_TESTS=1 to run acceptance-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def noise_fixture():
    """64x64: one 20x20 block plus 12 isolated pixels >= 10 px away."""
    return mask_ops.noise_fixture(size=64, blobs=((22, 22, 20, 20),), n_noise=12, min_distance=10, seed=7)


@pytest.fixture
def tiny_cfg():
    """Width-8, one block per layer, window 4: small enough for gradient checks."""
    return ModelConfig(base_width=8, blocks_per_layer=[1] * 7, window=4, ssm_state_dim=4, seed=3)


def random_mask(rng, h, w, p=0.5):
    return mask_ops.BinaryMask((rng.random((h, w)) < p).astype(np.uint8))


def blob_mask(rng, h, w, window):
    """Window-aligned random blobs: yields a mix of all three window classes."""
    bits = np.zeros((h, w), dtype=np.uint8)
    for _ in range(int(rng.integers(1, 4))):
        y, x = rng.integers(0, h), rng.integers(0, w)
        hh, ww = rng.integers(window, 3 * window + 1, size=2)
        bits[y:y + hh, x:x + ww] = 1
    return mask_ops.BinaryMask(bits)
