"""Desk-scale training for the blade codec's lossy and lossless models."""

from .bitswap import BitswapTrainConfig, train_bitswap
from .hyperprior import HyperpriorTrainConfig, train_hyperprior

__version__ = "0.1.0"
