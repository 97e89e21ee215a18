"""Two-level hyperprior lossy codec.

Encoding rounds both latents to integers, codes the deep latent with the
tabulated factorized priors and the first latent with zero-mean Gaussians
whose scales are synthesized from the deep latent.  Both alphabets carry
sentinel symbols, so any integer is codable; latents are clipped into
their alphabet before synthesis, which makes the decoder output a pure
function of the coded symbols (codec transparency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .discretize import PROB_FLOOR, gaussian_unit_bin_rows, unit_bin_cdf_rows
from .errors import CorruptionError
from .hierarchy import HyperpriorModel, forward
from .rans import AnsState, TableMatrix

RANGE_PRECISION = 16
GAUSS_TAIL_SIGMAS = float(ndtri(1.0 - PROB_FLOOR))


@dataclass
class LossyStream:
    """Entropy-coded patch: deep latent first, then the conditional latent."""

    z2_bytes: bytes
    z1_bytes: bytes

    @property
    def n_bits(self) -> int:
        return 8 * (len(self.z2_bytes) + len(self.z1_bytes))


def _z2_tables(model: HyperpriorModel, spatial: int) -> tuple[TableMatrix, np.ndarray]:
    """Coding tables for the deep latent, one alphabet row per channel."""
    medians, z_min, z_max = model.z2_prior_stats()
    ks = np.arange(-z_min, z_max + 1, dtype=np.float64)
    edges = np.concatenate(([ks[0] - 0.5], ks + 0.5))
    rows = np.stack([
        np.asarray(cdf(edges + med), dtype=np.float64)
        for cdf, med in zip(model.prior_cdfs, medians)
    ])
    tm = TableMatrix.from_cdf_rows(unit_bin_cdf_rows(rows), RANGE_PRECISION)
    freqs = np.repeat(tm.freqs, spatial, axis=0)
    cums = np.repeat(tm.cums, spatial, axis=0)
    first = np.repeat(np.asarray(medians, dtype=np.int64) - z_min - 1, spatial)
    return TableMatrix(freqs, cums, RANGE_PRECISION), first


def _z1_tables(model: HyperpriorModel, sigma: np.ndarray) -> tuple[TableMatrix, int]:
    """Zero-mean Gaussian tables; the alphabet covers the widest scale's tails."""
    bound = max(1, math.ceil(float(sigma.max()) * GAUSS_TAIL_SIGMAS))
    rows = gaussian_unit_bin_rows(sigma.reshape(-1), bound, bound)
    return TableMatrix.from_cdf_rows(rows, RANGE_PRECISION), bound


def _quantize_plan(model: HyperpriorModel, x):
    x01 = model.normalize(_check(model, x))
    z1 = np.rint(forward(model.analysis, x01)).astype(np.int64)
    z2 = np.rint(forward(model.hyper_analysis, z1.astype(np.float32))).astype(np.int64)

    spatial = z2.shape[1] * z2.shape[2]
    tm2, first2 = _z2_tables(model, spatial)
    sym2 = np.clip(z2.reshape(-1) - first2, 0, tm2.alphabet_size - 1)
    z2_coded = (sym2 + first2).reshape(z2.shape)

    sigma = model.scales_for_z1(z2_coded.astype(np.float32))
    tm1, bound = _z1_tables(model, sigma)
    sym1 = np.clip(z1.reshape(-1) + bound + 1, 0, tm1.alphabet_size - 1)
    z1_coded = (sym1 - bound - 1).reshape(z1.shape)
    return {
        "z1": z1, "z2": z2, "z1_coded": z1_coded, "z2_coded": z2_coded,
        "sym1": sym1, "sym2": sym2, "tm1": tm1, "tm2": tm2,
    }


def _check(model, x):
    x = np.asarray(x)
    expected = (3, model.patch_size, model.patch_size)
    if x.shape != expected:
        raise ValueError(f"patch shape {x.shape}, expected {expected}")
    return x


def lossy_encode(model: HyperpriorModel, x) -> LossyStream:
    plan = _quantize_plan(model, x)
    s2 = AnsState()
    plan["tm2"].encode_all(s2, plan["sym2"])
    s1 = AnsState()
    plan["tm1"].encode_all(s1, plan["sym1"])
    return LossyStream(s2.serialize(), s1.serialize())


def lossy_decode(model: HyperpriorModel, stream: LossyStream) -> np.ndarray:
    """Reconstruct the patch; inverse of :func:`lossy_encode` on the latents."""
    ps = model.patch_size
    h2 = w2 = None
    # Latent spatial dims follow the stride-2 depth of each transform.
    down1 = _downsampling(model.analysis)
    down2 = _downsampling(model.hyper_analysis)
    h1 = ps // down1
    h2 = h1 // down2
    spatial2 = h2 * h2
    tm2, first2 = _z2_tables(model, spatial2)
    try:
        s2 = AnsState.deserialize(stream.z2_bytes)
        sym2 = tm2.decode_all(s2)
    except Exception as exc:
        raise CorruptionError("deep-latent stream unreadable") from exc
    z2 = (sym2 + first2).reshape(model.z2_channels, h2, h2)

    sigma = model.scales_for_z1(z2.astype(np.float32))
    tm1, bound = _z1_tables(model, sigma)
    try:
        s1 = AnsState.deserialize(stream.z1_bytes)
        sym1 = tm1.decode_all(s1)
    except Exception as exc:
        raise CorruptionError("conditional-latent stream unreadable") from exc
    z1 = (sym1 - bound - 1).reshape(model.z1_channels, h1, h1)
    x01 = forward(model.synthesis, z1.astype(np.float32))
    return model.denormalize(x01)


def _downsampling(layers) -> int:
    f = 1
    for spec in layers:
        if spec.kind in ("conv", "conv_transpose") and spec.stride == 2:
            f *= 2
        elif spec.kind == "squeeze":
            f *= 2
        elif spec.kind == "unsqueeze":
            f //= 2
    return f


def reconstruct_from_quantized(model: HyperpriorModel, x) -> np.ndarray:
    """Synthesis of the clipped quantized latents; what a decoder must emit."""
    plan = _quantize_plan(model, x)
    x01 = forward(model.synthesis, plan["z1_coded"].astype(np.float32))
    return model.denormalize(x01)


def rate_breakdown(model: HyperpriorModel, x) -> tuple[float, float]:
    """Table cross-entropy (bits) of the two streams for a given patch."""
    plan = _quantize_plan(model, x)
    return plan["tm2"].bits_of(plan["sym2"]), plan["tm1"].bits_of(plan["sym1"])


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over 8-bit pixel values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr needs equal shapes")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def relaxed_rd_loss(model: HyperpriorModel, x, noise) -> float:
    """Training objective at one uniform-noise realization; no gradients.

    ``noise`` is a pair of arrays added to the two continuous latents.
    The rate term prices each noisy latent under its unit-bin mass
    ``c(z + 1/2) - c(z - 1/2)`` floored at 1e-9; distortion is the summed
    squared error in the normalized pixel domain, weighted by the model's
    quality factor.
    """
    rate, sse = rd_components(model, x, noise)
    return rate + model.zeta * sse


def rd_components(model: HyperpriorModel, x, noise) -> tuple[float, float]:
    u1, u2 = noise
    x01 = model.normalize(_check(model, x))
    z1t = forward(model.analysis, x01) + np.asarray(u1, dtype=np.float32)
    z2t = forward(model.hyper_analysis, z1t) + np.asarray(u2, dtype=np.float32)

    rate = 0.0
    for c, cdf in enumerate(model.prior_cdfs):
        v = z2t[c].astype(np.float64)
        mass = np.maximum(cdf(v + 0.5) - cdf(v - 0.5), PROB_FLOOR)
        rate -= float(np.log2(mass).sum())
    sigma = model.scales_for_z1(z2t).astype(np.float64)
    v = z1t.astype(np.float64)
    mass = np.maximum(ndtr((v + 0.5) / sigma) - ndtr((v - 0.5) / sigma), PROB_FLOOR)
    rate -= float(np.log2(mass).sum())

    xhat = forward(model.synthesis, z1t)
    sse = float(np.sum((xhat.astype(np.float64) - x01.astype(np.float64)) ** 2))
    return rate, sse
