import numpy as np
import pytest

from bladecodec_trainer.bitswap import BitswapTrainConfig, train_bitswap
from bladecodec_trainer.data import synthetic_textures
from bladecodec_trainer.hyperprior import HyperpriorTrainConfig, train_hyperprior


@pytest.fixture(scope="session")
def trained_hyperprior(tmp_path_factory):
    cfg = HyperpriorTrainConfig(steps=2000, n_patches=512, seed=0, zeta=0.05)
    path = tmp_path_factory.mktemp("hp") / "hp.rmlw"
    history, model = train_hyperprior(cfg, path)
    return cfg, path, history, model


@pytest.fixture(scope="session")
def trained_bitswap(tmp_path_factory):
    cfg = BitswapTrainConfig(steps=2000, n_patches=512, seed=0)
    path = tmp_path_factory.mktemp("bs") / "bs.rmlw"
    history, model = train_bitswap(cfg, path)
    return cfg, path, history, model


@pytest.fixture(scope="session")
def held_out_patches():
    return synthetic_textures(32, 16, seed=777)
