"""Training of the two-level lossy model on the relaxed objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import synthetic_textures
from .export import write_hyperprior
from .modules import Easn, GAUSSIAN_SIGMA_FLOOR, MonotoneCdf, layer_records

LOG2E = 1.4426950408889634


@dataclass
class HyperpriorTrainConfig:
    patch_size: int = 16
    hidden: int = 16
    z1_channels: int = 8
    z2_channels: int = 4
    zeta: float = 0.05
    learning_rate: float = 1e-4
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    n_patches: int = 512


class TorchHyperprior(nn.Module):
    def __init__(self, cfg: HyperpriorTrainConfig):
        super().__init__()
        h, c1, c2 = cfg.hidden, cfg.z1_channels, cfg.z2_channels
        self.analysis = nn.Sequential(
            nn.Conv2d(3, h, 5, stride=2, padding=2), Easn(h),
            nn.Conv2d(h, c1, 5, stride=2, padding=2))
        self.hyper_analysis = nn.Sequential(nn.Conv2d(c1, c2, 3, stride=2, padding=1))
        self.hyper_synthesis = nn.Sequential(nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1))
        self.synthesis = nn.Sequential(
            nn.ConvTranspose2d(c1, h, 4, stride=2, padding=1), Easn(h),
            nn.ConvTranspose2d(h, 3, 4, stride=2, padding=1))
        self.prior = MonotoneCdf(c2)

    def scales(self, z2):
        return torch.clamp(nn.functional.softplus(self.hyper_synthesis(z2)),
                           min=GAUSSIAN_SIGMA_FLOOR)

    def loss(self, x01, rng: torch.Generator):
        """Relaxed rate-distortion in bits plus weighted squared error."""
        z1 = self.analysis(x01)
        u1 = torch.rand(z1.shape, generator=rng) - 0.5
        z1n = z1 + u1
        z2 = self.hyper_analysis(z1n)
        u2 = torch.rand(z2.shape, generator=rng) - 0.5
        z2n = z2 + u2

        mass2 = torch.clamp(self.prior(z2n + 0.5) - self.prior(z2n - 0.5), min=1e-9)
        sigma = self.scales(z2n)
        gauss = torch.distributions.Normal(0.0, 1.0)
        mass1 = torch.clamp(gauss.cdf((z1n + 0.5) / sigma) - gauss.cdf((z1n - 0.5) / sigma),
                            min=1e-9)
        rate = -(torch.log(mass1).sum() + torch.log(mass2).sum()) * LOG2E
        xhat = self.synthesis(z1n)
        sse = ((xhat - x01) ** 2).sum()
        return rate, sse


def train_hyperprior(cfg: HyperpriorTrainConfig, out_path, patches: np.ndarray | None = None):
    """Optimize on texture patches and export; returns the loss history."""
    torch.manual_seed(cfg.seed)
    if patches is None:
        patches = synthetic_textures(cfg.n_patches, cfg.patch_size, seed=cfg.seed)
    data = torch.from_numpy(patches.astype(np.float32) / 255.0)

    model = TorchHyperprior(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    noise_rng = torch.Generator().manual_seed(cfg.seed + 1)
    pick_rng = np.random.default_rng(cfg.seed + 2)
    history = []
    for step in range(cfg.steps):
        idx = pick_rng.integers(0, data.shape[0], size=cfg.batch_size)
        batch = data[idx]
        rate, sse = model.loss(batch, noise_rng)
        loss = (rate + cfg.zeta * sse) / cfg.batch_size
        if not torch.isfinite(loss):
            raise RuntimeError(f"training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())

    export_hyperprior(model, cfg, out_path)
    return history, model


def export_hyperprior(model: TorchHyperprior, cfg: HyperpriorTrainConfig, out_path) -> None:
    write_hyperprior(
        out_path, cfg.patch_size, cfg.z1_channels, cfg.z2_channels, cfg.zeta,
        layer_records(model.analysis), layer_records(model.hyper_analysis),
        layer_records(model.hyper_synthesis), layer_records(model.synthesis),
        model.prior.tabulate())
