import numpy as np
import pytest

from bladecodec.hierarchy import toy_hyperprior, toy_model
from bladecodec.rans import AnsState


@pytest.fixture(scope="session")
def toy_l2_ps32():
    return toy_model(2, 32, seed=0)


@pytest.fixture(scope="session")
def toy_lossy_ps32():
    return toy_hyperprior(32, seed=0, zeta=0.01)


def random_patch(rng, size):
    return rng.integers(0, 256, size=(3, size, size)).astype(np.uint8)


def smooth_patch(rng, size):
    """Low-frequency content plus mild noise; friendlier to the toy models."""
    base = rng.integers(40, 216, size=(3, 4, 4)).astype(np.float64)
    up = np.repeat(np.repeat(base, size // 4, axis=1), size // 4, axis=2)
    out = up + rng.normal(0, 6, size=up.shape)
    return np.clip(out, 0, 255).astype(np.uint8)


def seeded_state(rng, n_bytes=1 << 16) -> AnsState:
    return AnsState.from_seed_bytes(rng.bytes(8 + n_bytes))
