import math

import numpy as np
import pytest

from bladecodec.discretize import TabulatedCdf
from bladecodec.errors import CorruptionError
from bladecodec.hierarchy import HyperpriorModel, LayerSpec, forward, inv_softplus
from bladecodec.lossy import (
    LossyStream,
    lossy_decode,
    lossy_encode,
    psnr,
    rate_breakdown,
    rd_components,
    reconstruct_from_quantized,
    relaxed_rd_loss,
)

from conftest import random_patch, smooth_patch


def test_codec_transparency(toy_lossy_ps32):
    rng = np.random.default_rng(0)
    for trial in range(8):
        x = smooth_patch(rng, 32) if trial % 2 else random_patch(rng, 32)
        stream = lossy_encode(toy_lossy_ps32, x)
        decoded = lossy_decode(toy_lossy_ps32, stream)
        assert np.array_equal(decoded, reconstruct_from_quantized(toy_lossy_ps32, x))


def test_decode_deterministic(toy_lossy_ps32):
    rng = np.random.default_rng(1)
    x = smooth_patch(rng, 32)
    stream = lossy_encode(toy_lossy_ps32, x)
    a = lossy_decode(toy_lossy_ps32, stream)
    b = lossy_decode(toy_lossy_ps32, stream)
    assert np.array_equal(a, b)


def test_measured_bits_match_cross_entropy(toy_lossy_ps32):
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = random_patch(rng, 32)
        stream = lossy_encode(toy_lossy_ps32, x)
        z2_bits, z1_bits = rate_breakdown(toy_lossy_ps32, x)
        assert abs(8 * len(stream.z2_bytes) - z2_bits) <= 80
        assert abs(8 * len(stream.z1_bytes) - z1_bits) <= 80


def test_truncated_stream_rejected(toy_lossy_ps32):
    rng = np.random.default_rng(3)
    x = smooth_patch(rng, 32)
    stream = lossy_encode(toy_lossy_ps32, x)
    with pytest.raises(CorruptionError):
        lossy_decode(toy_lossy_ps32, LossyStream(stream.z2_bytes[:4], stream.z1_bytes))


def identity_hyperprior(scale=64.0, size=16):
    """Linear 1x1 model: z1 = scale * (x01 - 1/2), synthesis inverts it."""
    eye = np.eye(3, dtype=np.float64)
    analysis = [LayerSpec("conv", 3, 3, 1, 1, 0,
                          np.concatenate([(eye * scale).reshape(-1),
                                          np.full(3, -scale / 2)]))]
    synthesis = [LayerSpec("conv", 3, 3, 1, 1, 0,
                           np.concatenate([(eye / scale).reshape(-1), np.full(3, 0.5)]))]
    hyper_analysis = [LayerSpec("conv", 3, 1, 1, 1, 0,
                                np.concatenate([np.full(3, 0.05), np.zeros(1)]))]
    # Scales wide enough that the coding alphabet covers every latent.
    hyper_synthesis = [LayerSpec("conv", 1, 3, 1, 1, 0,
                                 np.concatenate([np.zeros(3), np.full(3, inv_softplus(8.0))]))]
    knots = np.linspace(-scale, scale, 257)
    cdf = TabulatedCdf(knots, np.clip((knots + scale) / (2 * scale), 0, 1))
    return HyperpriorModel(size, 3, 1, analysis, hyper_analysis, hyper_synthesis,
                           synthesis, [cdf], zeta=0.01)


def test_linear_model_reconstruction_within_quantization_distance():
    model = identity_hyperprior(scale=64.0, size=16)
    rng = np.random.default_rng(4)
    x = random_patch(rng, 16)
    stream = lossy_encode(model, x)
    decoded = lossy_decode(model, stream)
    # Rounding z1 = 64 * x01 moves pixels by at most 255 * 0.5 / 64, plus
    # one more step for the output integer rounding.
    bound = 255 * 0.5 / 64.0 + 1.0
    assert np.abs(decoded.astype(float) - x.astype(float)).max() <= bound


def test_psnr_sentinel_and_zero():
    a = np.zeros((1, 1), dtype=np.uint8)
    assert math.isinf(psnr(a, a))
    b = np.full((1, 1), 255, dtype=np.uint8)
    assert abs(psnr(a, b) - 0.0) < 1e-12


def test_psnr_matches_hand_formula():
    a = np.array([[10.0, 20.0], [30.0, 40.0]])
    b = np.array([[12.0, 18.0], [33.0, 44.0]])
    mse = ((a - b) ** 2).mean()
    expected = 10.0 * math.log10(255.0 ** 2 / mse)
    assert abs(psnr(a, b) - expected) < 1e-9
    rng = np.random.default_rng(5)
    u = rng.integers(0, 256, size=(3, 8, 8)).astype(float)
    v = rng.integers(0, 256, size=(3, 8, 8)).astype(float)
    ref = 10.0 * math.log10(255.0 ** 2 / float(np.mean((u - v) ** 2)))
    assert abs(psnr(u, v) - ref) < 1e-9


def _zero_noise(model, x):
    x01 = model.normalize(x)
    z1 = forward(model.analysis, x01)
    z2 = forward(model.hyper_analysis, z1)
    return np.zeros_like(z1), np.zeros_like(z2)


def test_relaxed_loss_zeta_zero_is_rate_only(toy_lossy_ps32):
    rng = np.random.default_rng(6)
    x = smooth_patch(rng, 32)
    noise = _zero_noise(toy_lossy_ps32, x)
    rate, sse = rd_components(toy_lossy_ps32, x, noise)
    model0 = HyperpriorModel(
        toy_lossy_ps32.patch_size, toy_lossy_ps32.z1_channels, toy_lossy_ps32.z2_channels,
        toy_lossy_ps32.analysis, toy_lossy_ps32.hyper_analysis,
        toy_lossy_ps32.hyper_synthesis, toy_lossy_ps32.synthesis,
        toy_lossy_ps32.prior_cdfs, zeta=0.0)
    assert abs(relaxed_rd_loss(model0, x, noise) - rate) < 1e-9
    assert relaxed_rd_loss(toy_lossy_ps32, x, noise) > rate or sse == 0


def test_relaxed_loss_zero_noise_integer_latents_equals_unit_bin_bits():
    # With a constant input chosen so the linear analysis lands on
    # integers, the rate term at zero noise is exactly the unit-bin mass.
    model = identity_hyperprior(scale=510.0, size=8)
    x = np.full((3, 8, 8), 85, dtype=np.uint8)  # z1 = 2 * 85 - 255 = -85
    u1, u2 = _zero_noise(model, x)
    z1 = forward(model.analysis, model.normalize(x))
    assert np.allclose(z1, np.rint(z1))
    rate, _ = rd_components(model, x, (u1, u2))

    sigma = model.scales_for_z1(forward(model.hyper_analysis, z1))
    from scipy.special import ndtr
    z = z1.astype(np.float64)
    mass1 = ndtr((z + 0.5) / sigma) - ndtr((z - 0.5) / sigma)
    z2 = forward(model.hyper_analysis, z1).astype(np.float64)
    mass2 = model.prior_cdfs[0](z2 + 0.5) - model.prior_cdfs[0](z2 - 0.5)
    expected = -np.log2(np.maximum(mass1, 1e-9)).sum() - np.log2(np.maximum(mass2, 1e-9)).sum()
    assert abs(rate - expected) < 1e-6


def test_relaxed_loss_noise_perturbs_rate(toy_lossy_ps32):
    rng = np.random.default_rng(7)
    x = smooth_patch(rng, 32)
    u1, u2 = _zero_noise(toy_lossy_ps32, x)
    base = relaxed_rd_loss(toy_lossy_ps32, x, (u1, u2))
    j1 = u1 + rng.uniform(-0.5, 0.5, size=u1.shape).astype(np.float32)
    j2 = u2 + rng.uniform(-0.5, 0.5, size=u2.shape).astype(np.float32)
    other = relaxed_rd_loss(toy_lossy_ps32, x, (j1, j2))
    assert other != base
