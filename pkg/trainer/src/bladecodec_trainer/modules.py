"""Torch building blocks that serialize 1:1 into weight-file layer records."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

LOGISTIC_SIGMA_FLOOR = 1e-3
GAUSSIAN_SIGMA_FLOOR = 1e-2


class Easn(nn.Module):
    """Residual sigmoid-gated scaling: m(y) * sigmoid(F(y)) + y."""

    def __init__(self, channels: int):
        super().__init__()
        self.m = nn.Conv2d(channels, channels, 1)
        self.f = nn.Conv2d(channels, channels, 1)
        nn.init.normal_(self.m.weight, std=0.05)
        nn.init.zeros_(self.m.bias)
        nn.init.normal_(self.f.weight, std=0.05)
        nn.init.zeros_(self.f.bias)

    def forward(self, y):
        return self.m(y) * torch.sigmoid(self.f(y)) + y


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        self.c1 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.c2 = nn.Conv2d(channels, channels, kernel, padding=pad)
        nn.init.normal_(self.c1.weight, std=0.03)
        nn.init.zeros_(self.c1.bias)
        nn.init.zeros_(self.c2.weight)
        nn.init.zeros_(self.c2.bias)

    def forward(self, x):
        h = self.c1(torch.nn.functional.elu(x))
        h = self.c2(torch.nn.functional.elu(h))
        return x + h


def _flat(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32).reshape(-1)


def layer_records(module: nn.Module) -> list[dict]:
    """Export a Sequential of supported modules into layer records."""
    records = []
    for layer in module:
        if isinstance(layer, nn.Conv2d):
            records.append(dict(
                kind="conv", in_ch=layer.in_channels, out_ch=layer.out_channels,
                kernel=layer.kernel_size[0], stride=layer.stride[0],
                padding=layer.padding[0],
                weights=np.concatenate([_flat(layer.weight), _flat(layer.bias)])))
        elif isinstance(layer, nn.ConvTranspose2d):
            records.append(dict(
                kind="conv_transpose", in_ch=layer.in_channels, out_ch=layer.out_channels,
                kernel=layer.kernel_size[0], stride=layer.stride[0],
                padding=layer.padding[0],
                weights=np.concatenate([_flat(layer.weight), _flat(layer.bias)])))
        elif isinstance(layer, Easn):
            c = layer.m.in_channels
            records.append(dict(
                kind="easn", in_ch=c, out_ch=c, kernel=0, stride=1, padding=0,
                weights=np.concatenate([_flat(layer.m.weight), _flat(layer.m.bias),
                                        _flat(layer.f.weight), _flat(layer.f.bias)])))
        elif isinstance(layer, ResidualBlock):
            c = layer.c1.in_channels
            k = layer.c1.kernel_size[0]
            records.append(dict(
                kind="residual_block", in_ch=c, out_ch=c, kernel=k, stride=1, padding=0,
                weights=np.concatenate([_flat(layer.c1.weight), _flat(layer.c1.bias),
                                        _flat(layer.c2.weight), _flat(layer.c2.bias)])))
        elif isinstance(layer, nn.ELU):
            records.append(dict(kind="elu", in_ch=0, out_ch=0, kernel=0, stride=1,
                                padding=0, weights=np.zeros(0, np.float32)))
        else:
            raise TypeError(f"layer {type(layer).__name__} is not exportable")
    return records


class MonotoneCdf(nn.Module):
    """Trainable cdf per channel: a softmax mixture of sigmoids."""

    def __init__(self, channels: int, components: int = 5, spread: float = 8.0):
        super().__init__()
        self.loc = nn.Parameter(torch.linspace(-spread, spread, components)
                                .repeat(channels, 1) + 0.1 * torch.randn(channels, components))
        self.log_scale = nn.Parameter(torch.zeros(channels, components))
        self.logit_w = nn.Parameter(torch.zeros(channels, components))

    def forward(self, x):
        """x: (B, C, H, W) -> cdf values in (0, 1)."""
        w = torch.softmax(self.logit_w, dim=1)
        scale = torch.nn.functional.softplus(self.log_scale) + 0.1
        z = (x.unsqueeze(-1) - self.loc.view(1, -1, 1, 1, self.loc.shape[1])) \
            / scale.view(1, -1, 1, 1, scale.shape[1])
        return (torch.sigmoid(z) * w.view(1, -1, 1, 1, w.shape[1])).sum(-1)

    @torch.no_grad()
    def tabulate(self, n_knots: int = 1024):
        """Per-channel (xs, ys) knot tables covering the distribution body."""
        scale = torch.nn.functional.softplus(self.log_scale) + 0.1
        span = float(self.loc.abs().max() + 24.0 * scale.max())
        xs = torch.linspace(-span, span, n_knots)
        # Reuse forward by shaping the knot grid as (B, C, H, W).
        vals = self.forward(xs.view(1, 1, 1, -1).expand(1, self.loc.shape[0], 1, -1))
        tables = []
        for c in range(self.loc.shape[0]):
            ys = vals[0, c, 0].cpu().numpy().astype(np.float64)
            ys = np.maximum.accumulate(np.clip(ys, 0.0, 1.0))
            tables.append((xs.cpu().numpy().astype(np.float64), ys))
        return tables
