"""Training of the hierarchical lossless model on the layered bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import synthetic_textures
from .export import write_bitswap
from .modules import Easn, LOGISTIC_SIGMA_FLOOR, ResidualBlock, layer_records

LOG2E = 1.4426950408889634


@dataclass
class BitswapTrainConfig:
    depth: int = 2
    patch_size: int = 16
    hidden: int = 16
    z_channels: int = 4
    residual_blocks: int = 2
    learning_rate: float = 1e-4
    free_bits: float = 1.0    # floor on each layer's rate, bits per dim
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    n_patches: int = 512
    grid_lo: float = -8.0
    grid_hi: float = 8.0
    grid_precision: int = 10


def _init_scale_head(conv, n_params: int, sigma0: float):
    """Start the softplus-mapped scales near sigma0 instead of 0.69."""
    with torch.no_grad():
        conv.bias[n_params:] = float(np.log(np.expm1(max(sigma0 - LOGISTIC_SIGMA_FLOOR, 1e-3))))


def _inference_net(in_ch, hidden, z_ch, kernel, blocks, sigma0=0.25):
    layers = [nn.Conv2d(in_ch, hidden, kernel, stride=2, padding=kernel // 2), nn.ELU()]
    layers += [ResidualBlock(hidden) for _ in range(blocks)]
    head = nn.Conv2d(hidden, 2 * z_ch, 3, padding=1)
    _init_scale_head(head, z_ch, sigma0)
    return nn.Sequential(*layers, head)


def _generative_net(z_ch, hidden, out_ch, kernel, blocks, sigma0=0.3):
    layers = [nn.Conv2d(z_ch, hidden, kernel, padding=kernel // 2), nn.ELU()]
    layers += [ResidualBlock(hidden) for _ in range(blocks)]
    head = nn.ConvTranspose2d(hidden, 2 * out_ch, 4, stride=2, padding=1)
    _init_scale_head(head, out_ch, sigma0)
    return nn.Sequential(*layers, head)


def _split(raw):
    c = raw.shape[1] // 2
    mu = raw[:, :c]
    sigma = nn.functional.softplus(raw[:, c:]) + LOGISTIC_SIGMA_FLOOR
    return mu, sigma


def _logistic_logpdf(z, mu, sigma):
    t = (z - mu) / sigma
    return -t - torch.log(sigma) - 2.0 * nn.functional.softplus(-t)


def _logistic_sample(mu, sigma, rng):
    u = torch.rand(mu.shape, generator=rng).clamp(1e-6, 1 - 1e-6)
    return mu + sigma * (torch.log(u) - torch.log1p(-u))


def _pixel_log_mass(x255, mu, sigma):
    """log mass of each 8-bit pixel under a discretized logistic on [-1, 1]."""
    upper = (x255 + 0.5) / 127.5 - 1.0
    lower = (x255 - 0.5) / 127.5 - 1.0
    hi = torch.sigmoid((upper - mu) / sigma)
    lo = torch.sigmoid((lower - mu) / sigma)
    hi = torch.where(x255 > 254.5, torch.ones_like(hi), hi)
    lo = torch.where(x255 < 0.5, torch.zeros_like(lo), lo)
    return torch.log(torch.clamp(hi - lo, min=1e-12))


class TorchBitswap(nn.Module):
    """Markov chain z_L -> .. -> z_1 -> x with logistic conditionals.

    The top-level transforms use 5x5 kernels, the rest 3x3; inference and
    generative stacks mirror each other level by level.
    """

    def __init__(self, cfg: BitswapTrainConfig):
        super().__init__()
        self.cfg = cfg
        zc, h, blocks = cfg.z_channels, cfg.hidden, cfg.residual_blocks
        self.inference = nn.ModuleList()
        self.generative = nn.ModuleList()
        for level in range(1, cfg.depth + 1):
            in_ch = 3 if level == 1 else zc
            kernel = 5 if level == cfg.depth else 3
            self.inference.append(_inference_net(in_ch, h, zc, kernel, blocks))
        for level in range(cfg.depth):
            out_ch = 3 if level == 0 else zc
            kernel = 5 if level == cfg.depth - 1 else 3
            sigma0 = 0.08 if level == 0 else 0.3
            self.generative.append(_generative_net(zc, h, out_ch, kernel, blocks, sigma0))

    def layer_rates(self, x255, rng: torch.Generator):
        """Observation bits plus each latent layer's net rate in bits."""
        x01c = x255 / 127.5 - 1.0
        zs = []
        log_q = []
        cond = x01c
        for level in range(self.cfg.depth):
            mu, sigma = _split(self.inference[level](cond))
            z = _logistic_sample(mu, sigma, rng)
            log_q.append(_logistic_logpdf(z, mu, sigma).sum())
            zs.append(z)
            cond = z
        mu_x, sigma_x = _split(self.generative[0](zs[0]))
        obs_bits = -_pixel_log_mass(x255, mu_x, sigma_x).sum() * LOG2E
        rates = []
        for level in range(self.cfg.depth):
            if level + 1 < self.cfg.depth:
                mu, sigma = _split(self.generative[level + 1](zs[level + 1]))
                log_p = _logistic_logpdf(zs[level], mu, sigma).sum()
            else:
                log_p = _logistic_logpdf(zs[level], torch.zeros(()), torch.ones(())).sum()
            rates.append((log_q[level] - log_p) * LOG2E)
        return obs_bits, rates, [int(np.prod(z.shape)) for z in zs]


def train_bitswap(cfg: BitswapTrainConfig, out_path, patches: np.ndarray | None = None):
    """Minimize the layered bound with per-layer free bits; export weights."""
    torch.manual_seed(cfg.seed)
    if patches is None:
        patches = synthetic_textures(cfg.n_patches, cfg.patch_size, seed=cfg.seed)
    data = torch.from_numpy(patches.astype(np.float32))

    model = TorchBitswap(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    noise_rng = torch.Generator().manual_seed(cfg.seed + 1)
    pick_rng = np.random.default_rng(cfg.seed + 2)
    history = []
    for step in range(cfg.steps):
        idx = pick_rng.integers(0, data.shape[0], size=cfg.batch_size)
        batch = data[idx]
        obs_bits, rates, dims = model.layer_rates(batch, noise_rng)
        loss = obs_bits
        for rate, n in zip(rates, dims):
            floor = cfg.free_bits * n * cfg.batch_size
            loss = loss + torch.clamp(rate, min=floor)
        loss = loss / (batch.numel())
        if not torch.isfinite(loss):
            raise RuntimeError(f"training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        history.append(loss.item())

    export_bitswap(model, cfg, out_path)
    return history, model


def export_bitswap(model: TorchBitswap, cfg: BitswapTrainConfig, out_path) -> None:
    write_bitswap(
        out_path, cfg.depth, cfg.patch_size, cfg.z_channels,
        [layer_records(t) for t in model.inference],
        [layer_records(t) for t in model.generative],
        grid_precision=cfg.grid_precision, grid_lo=cfg.grid_lo, grid_hi=cfg.grid_hi)


@torch.no_grad()
def discretized_elbo_bits(model: TorchBitswap, x255: np.ndarray, grid_lo=-8.0,
                          grid_hi=8.0, grid_precision=10,
                          table_bits=22) -> tuple[float, list]:
    """Deterministic discretized bound at grid-quantized posterior means.

    Latents are the bin indices of each posterior mean; every distribution
    is integrated over its bin (or pixel bin), matching what the codec
    prices.  ``table_bits`` is the codec's entropy-table resolution: no
    symbol can cost more than that, so masses are floored at 2**-table_bits.
    Returns (total bits, latent bin indices).
    """
    cfg = model.cfg
    n_bins = 1 << grid_precision
    width = (grid_hi - grid_lo) / n_bins
    mass_floor = 2.0 ** -table_bits

    def bin_of(v):
        return torch.clamp(((v - grid_lo) / width).floor(), 0, n_bins - 1)

    def centroid(k):
        return (grid_lo + (k + 0.5) * width).to(torch.float32)

    def bin_log2_mass(z_idx, mu, sigma):
        lo_edge = grid_lo + z_idx * width
        hi_edge = lo_edge + width
        hi = torch.sigmoid((hi_edge - mu) / sigma)
        lo = torch.sigmoid((lo_edge - mu) / sigma)
        hi = torch.where(z_idx >= n_bins - 1, torch.ones_like(hi), hi)
        lo = torch.where(z_idx <= 0, torch.zeros_like(lo), lo)
        return torch.log2(torch.clamp(hi - lo, min=mass_floor))

    x = torch.from_numpy(x255.astype(np.float32)).unsqueeze(0)
    cond = x / 127.5 - 1.0
    idxs = []
    values = []
    posterior_bits = 0.0
    for level in range(cfg.depth):
        mu, sigma = _split(model.inference[level](cond))
        k = bin_of(mu)
        posterior_bits -= float(bin_log2_mass(k, mu, sigma).sum())
        idxs.append(k)
        values.append(centroid(k))
        cond = values[-1]
    mu_x, sigma_x = _split(model.generative[0](values[0]))
    obs_log = _pixel_log_mass(x, mu_x, sigma_x) * LOG2E
    generative_bits = float(-torch.clamp(obs_log, min=-float(table_bits)).sum())
    for level in range(cfg.depth):
        if level + 1 < cfg.depth:
            mu, sigma = _split(model.generative[level + 1](values[level + 1]))
        else:
            mu = torch.zeros_like(values[level])
            sigma = torch.ones_like(values[level])
        generative_bits -= float(bin_log2_mass(idxs[level], mu, sigma).sum())
    total = generative_bits - posterior_bits
    return total, [k.squeeze(0).numpy().astype(np.int64) for k in idxs]
