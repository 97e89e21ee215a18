import numpy as np
import pytest

from bladecodec.errors import AccountingError, ConfigError
from bladecodec.hierarchy import (
    HierarchicalModel,
    LayerSpec,
    apply_layer,
    forward,
    inv_softplus,
    negative_elbo,
    softplus,
    toy_hyperprior,
    toy_model,
)
from bladecodec.weights import deserialize_model, serialize_model


def naive_conv(x, w, b, stride, padding):
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((cin, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, padding:padding + h, padding:padding + wd] = x
    ho = (xp.shape[1] - k) // stride + 1
    wo = (xp.shape[2] - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(cin):
                    for ky in range(k):
                        for kx in range(k):
                            acc += w[o, c, ky, kx] * xp[c, i * stride + ky, j * stride + kx]
                out[o, i, j] = acc + b[o]
    return out


def conv_spec(w, b, stride, padding):
    cout, cin, k, _ = w.shape
    flat = np.concatenate([w.reshape(-1), b])
    return LayerSpec("conv", cin, cout, k, stride, padding, flat)


def test_identity_one_by_one_conv():
    w = np.eye(3).reshape(3, 3, 1, 1).astype(np.float32)
    spec = conv_spec(w, np.zeros(3), 1, 0)
    x = np.random.default_rng(0).standard_normal((3, 6, 6)).astype(np.float32)
    out = apply_layer(spec, x)
    assert np.array_equal(out, x)


def test_conv_matches_naive_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 8, 8)).astype(np.float32)
    w = rng.standard_normal((5, 4, 3, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    got = apply_layer(conv_spec(w, b, 2, 1), x)
    ref = naive_conv(x.astype(np.float64), w.astype(np.float64), b.astype(np.float64), 2, 1)
    assert got.shape == ref.shape
    assert np.abs(got - ref).max() < 1e-5


def test_conv_transpose_matches_scatter_oracle():
    rng = np.random.default_rng(2)
    cin, cout, k, stride, padding = 3, 2, 4, 2, 1
    x = rng.standard_normal((cin, 5, 5)).astype(np.float32)
    w = rng.standard_normal((cin, cout, k, k)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    flat = np.concatenate([w.reshape(-1), b])
    got = apply_layer(LayerSpec("conv_transpose", cin, cout, k, stride, padding, flat), x)

    out_h = (x.shape[1] - 1) * stride - 2 * padding + k
    ref = np.zeros((cout, out_h, out_h))
    for c in range(cin):
        for i in range(x.shape[1]):
            for j in range(x.shape[2]):
                for o in range(cout):
                    for ky in range(k):
                        for kx in range(k):
                            oy = i * stride - padding + ky
                            ox = j * stride - padding + kx
                            if 0 <= oy < out_h and 0 <= ox < out_h:
                                ref[o, oy, ox] += w[c, o, ky, kx] * x[c, i, j]
    ref += b[:, None, None]
    assert got.shape == ref.shape
    assert np.abs(got - ref).max() < 1e-4


def test_easn_residual_limit():
    # With a hugely negative gate bias the sigmoid kills the scaling term.
    c = 4
    m_w = np.random.default_rng(3).standard_normal((c, c)).astype(np.float32)
    flat = np.concatenate([m_w.reshape(-1), np.zeros(c),
                           np.zeros(c * c), np.full(c, -60.0)]).astype(np.float32)
    spec = LayerSpec("easn", c, c, 0, 1, 0, flat)
    x = np.random.default_rng(4).standard_normal((c, 5, 5)).astype(np.float32)
    out = apply_layer(spec, x)
    assert np.abs(out - x).max() < 1e-6


def test_squeeze_unsqueeze_inverse():
    x = np.arange(3 * 8 * 8, dtype=np.float32).reshape(3, 8, 8)
    sq = apply_layer(LayerSpec("squeeze", 3, 12), x)
    assert sq.shape == (12, 4, 4)
    back = apply_layer(LayerSpec("unsqueeze", 12, 3), sq)
    assert np.array_equal(back, x)


def test_residual_block_zero_weights_is_identity():
    c, k = 3, 3
    flat = np.zeros(2 * (c * c * k * k + c), dtype=np.float32)
    spec = LayerSpec("residual_block", c, c, k, 1, 0, flat)
    x = np.random.default_rng(5).standard_normal((c, 6, 6)).astype(np.float32)
    assert np.array_equal(apply_layer(spec, x), x)


def test_layer_weight_count_validation():
    with pytest.raises(ConfigError):
        LayerSpec("conv", 3, 3, 3, 1, 1, np.zeros(5, dtype=np.float32))
    with pytest.raises(ConfigError):
        LayerSpec("conv", 3, 3, 3, 3, 1, np.zeros(84, dtype=np.float32))


def test_forward_shape_mismatch():
    w = np.zeros((2, 4, 1, 1), dtype=np.float32)
    spec = conv_spec(w, np.zeros(2), 1, 0)
    with pytest.raises(ConfigError):
        forward([spec], np.zeros((3, 4, 4), dtype=np.float32))


def test_softplus_inverse():
    for v in (0.05, 0.25, 1.5):
        assert abs(float(softplus(np.float32(inv_softplus(v)))) - v) < 1e-6


def test_toy_model_deterministic_and_shaped():
    a = toy_model(2, 64, seed=9)
    b = toy_model(2, 64, seed=9)
    for ta, tb in zip(a.inference + a.generative, b.inference + b.generative):
        for la, lb in zip(ta, tb):
            assert np.array_equal(la.weights, lb.weights)
    # Squeeze factor 2 per level.
    assert a.latent_shape(1) == (2, 32, 32)
    assert a.latent_shape(2) == (2, 16, 16)
    c = toy_model(2, 64, seed=10)
    assert not np.array_equal(a.inference[0][0].weights, c.inference[0][0].weights)


def test_toy_model_constant_input_constant_params():
    model = toy_model(2, 32, seed=0)
    x = np.full((3, 32, 32), 77, dtype=np.uint8)
    mu, sigma = model.posterior_params(1, model.normalize(x))
    for ch in range(mu.shape[0]):
        assert np.ptp(mu[ch]) < 1e-6
        assert np.ptp(sigma[ch]) < 1e-6


def test_posterior_scales_positive():
    model = toy_model(3, 32, seed=1)
    x = np.random.default_rng(0).integers(0, 256, size=(3, 32, 32)).astype(np.uint8)
    cond = model.normalize(x)
    for level in range(1, 4):
        mu, sigma = model.posterior_params(level, cond)
        assert np.all(sigma > 0)
        cond = mu


def test_negative_elbo_prefers_smooth_patches():
    model = toy_model(2, 32, seed=0)
    rng = np.random.default_rng(8)
    flat = np.full((3, 32, 32), 128, dtype=np.uint8)
    noise = rng.integers(0, 256, size=(3, 32, 32)).astype(np.uint8)

    def greedy_latents(x):
        zs = []
        cond = model.normalize(x)
        for level in range(1, model.depth + 1):
            mu, _ = model.posterior_params(level, cond)
            zs.append(model.grid.bin_of(mu).reshape(-1))
            cond = model.centroids(level, zs[-1])
        return zs

    assert negative_elbo(model, flat, greedy_latents(flat)) <= \
        negative_elbo(model, noise, greedy_latents(noise))


def test_negative_elbo_rejects_out_of_grid_latents():
    model = toy_model(1, 16, seed=0)
    x = np.zeros((3, 16, 16), dtype=np.uint8)
    bad = [np.full(np.prod(model.latent_shape(1)), model.grid.n_bins, dtype=np.int64)]
    with pytest.raises(AccountingError):
        negative_elbo(model, x, bad)


def test_weight_file_round_trip_bitswap():
    model = toy_model(3, 32, seed=4)
    blob = serialize_model(model)
    again = serialize_model(deserialize_model(blob))
    assert blob == again


def test_weight_file_round_trip_hyperprior():
    model = toy_hyperprior(32, seed=4, zeta=0.05)
    blob = serialize_model(model)
    restored = deserialize_model(blob)
    assert serialize_model(restored) == blob
    x = np.random.default_rng(0).integers(0, 256, size=(3, 32, 32)).astype(np.uint8)
    a = forward(model.analysis, model.normalize(x))
    b = forward(restored.analysis, restored.normalize(x))
    assert np.array_equal(a, b)


def test_forward_bit_reproducible():
    model = toy_model(2, 64, seed=3)
    x = np.random.default_rng(1).integers(0, 256, size=(3, 64, 64)).astype(np.uint8)
    outs = [model.posterior_params(1, model.normalize(x))[0] for _ in range(2)]
    assert np.array_equal(outs[0], outs[1])
