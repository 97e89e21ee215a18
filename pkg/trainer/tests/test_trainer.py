import numpy as np
import pytest
import torch
from scipy.special import ndtr

from bladecodec.bitsback import bitswap_decode, bitswap_encode
from bladecodec.hierarchy import forward, negative_elbo, toy_model
from bladecodec.lossy import lossy_decode, lossy_encode, rd_components, reconstruct_from_quantized
from bladecodec.rans import AnsState
from bladecodec.weights import load_model

from bladecodec_trainer.bitswap import BitswapTrainConfig, discretized_elbo_bits, train_bitswap
from bladecodec_trainer.cli import main as train_main
from bladecodec_trainer.data import synthetic_textures
from bladecodec_trainer.hyperprior import HyperpriorTrainConfig, train_hyperprior

PARITY_BITS_PER_DIM = 1e-3


def test_hyperprior_loss_decreases(trained_hyperprior):
    _, _, history, _ = trained_hyperprior
    init = float(np.mean(history[:20]))
    final = float(np.mean(history[-20:]))
    assert final <= 0.8 * init  # at least a 20% drop over the run


def test_hyperprior_zeta_zero_collapses_rate(tmp_path):
    cfg = HyperpriorTrainConfig(steps=400, n_patches=128, seed=1, zeta=0.0)
    history, _ = train_hyperprior(cfg, tmp_path / "hp0.rmlw")
    assert float(np.mean(history[-20:])) < float(np.mean(history[:20]))


def test_hyperprior_two_seeds_differ_and_load(tmp_path):
    paths = []
    for seed in (3, 4):
        cfg = HyperpriorTrainConfig(steps=40, n_patches=32, seed=seed)
        train_hyperprior(cfg, tmp_path / f"hp{seed}.rmlw")
        paths.append(tmp_path / f"hp{seed}.rmlw")
    blobs = [p.read_bytes() for p in paths]
    assert blobs[0] != blobs[1]
    for p in paths:
        model = load_model(p)
        x = synthetic_textures(1, cfg.patch_size, seed=5)[0]
        stream = lossy_encode(model, x)
        assert np.array_equal(lossy_decode(model, stream),
                              reconstruct_from_quantized(model, x))


def test_analysis_forward_parity(trained_hyperprior, held_out_patches):
    _, path, _, tmodel = trained_hyperprior
    prim = load_model(path)
    x = held_out_patches[0]
    with torch.no_grad():
        z_t = tmodel.analysis(torch.from_numpy(x.astype(np.float32) / 255.0)
                              .unsqueeze(0))[0].numpy()
    z_p = forward(prim.analysis, prim.normalize(x))
    assert np.abs(z_t - z_p).max() < 1e-5


def _trainer_loss_on_export(tmodel, zeta, x, noise):
    """Trainer-side relaxed loss evaluated on the exported (tabulated) prior."""
    u1, u2 = noise
    tables = tmodel.prior.tabulate()
    with torch.no_grad():
        x01 = torch.from_numpy(x.astype(np.float32) / 255.0).unsqueeze(0)
        z1 = tmodel.analysis(x01) + torch.from_numpy(u1).unsqueeze(0)
        z2 = tmodel.hyper_analysis(z1) + torch.from_numpy(u2).unsqueeze(0)
        sigma = tmodel.scales(z2)[0].numpy().astype(np.float64)
        xhat = tmodel.synthesis(z1)[0].numpy().astype(np.float64)
    z2n = z2[0].numpy().astype(np.float64)
    rate = 0.0
    for c, (xs, ys) in enumerate(tables):
        mass = np.maximum(np.interp(z2n[c] + 0.5, xs, ys)
                          - np.interp(z2n[c] - 0.5, xs, ys), 1e-9)
        rate -= np.log2(mass).sum()
    v = z1[0].numpy().astype(np.float64)
    mass1 = np.maximum(ndtr((v + 0.5) / sigma) - ndtr((v - 0.5) / sigma), 1e-9)
    rate -= np.log2(mass1).sum()
    sse = ((xhat - x01[0].numpy().astype(np.float64)) ** 2).sum()
    return rate + zeta * sse, v.size + z2n.size


def test_relaxed_loss_parity(trained_hyperprior, held_out_patches):
    cfg, path, _, tmodel = trained_hyperprior
    prim = load_model(path)
    rng = np.random.default_rng(5)
    for x in held_out_patches[:4]:
        z1 = forward(prim.analysis, prim.normalize(x))
        u1 = rng.uniform(-0.5, 0.5, z1.shape).astype(np.float32)
        z2_shape = forward(prim.hyper_analysis, z1 + u1).shape
        u2 = rng.uniform(-0.5, 0.5, z2_shape).astype(np.float32)
        rate_p, sse_p = rd_components(prim, x, (u1, u2))
        loss_p = rate_p + prim.zeta * sse_p
        loss_t, dims = _trainer_loss_on_export(tmodel, cfg.zeta, x, (u1, u2))
        assert abs(loss_p - loss_t) / dims <= PARITY_BITS_PER_DIM


def test_bitswap_depth_one_sanity_converges(tmp_path):
    cfg = BitswapTrainConfig(depth=1, steps=300, n_patches=128, seed=2)
    history, _ = train_bitswap(cfg, tmp_path / "bs1.rmlw")
    assert float(np.mean(history[-20:])) < float(np.mean(history[:20]))
    model = load_model(tmp_path / "bs1.rmlw")
    assert model.depth == 1


def test_bitswap_loss_decreases(trained_bitswap):
    _, _, history, _ = trained_bitswap
    assert float(np.mean(history[-20:])) < 0.8 * float(np.mean(history[:20]))


def test_free_bits_floor(trained_bitswap, held_out_patches):
    # The objective clamps each layer's rate at free_bits * dims, and the
    # realized per-layer net rate stays above the 1-bit floor.
    cfg, _, _, tmodel = trained_bitswap
    rng = torch.Generator().manual_seed(9)
    batch = torch.from_numpy(held_out_patches.astype(np.float32))
    _, rates, dims = tmodel.layer_rates(batch, rng)
    n = batch.shape[0]
    for rate, d in zip(rates, dims):
        per_layer_bits = rate.item() / n
        assert per_layer_bits >= cfg.free_bits
        floored = max(rate.item(), cfg.free_bits * d * n)
        assert floored >= cfg.free_bits * d * n - 1e-6


def test_elbo_export_parity(trained_bitswap, held_out_patches):
    _, path, _, tmodel = trained_bitswap
    prim = load_model(path)
    for x in held_out_patches[:4]:
        elbo_t, latents = discretized_elbo_bits(tmodel, x)
        elbo_p = negative_elbo(prim, x, latents)
        dims = sum(l.size for l in latents) + x.size
        assert abs(elbo_t - elbo_p) / dims <= PARITY_BITS_PER_DIM


def greedy_latents(model, x):
    zs = []
    cond = model.normalize(x)
    for level in range(1, model.depth + 1):
        mu, _ = model.posterior_params(level, cond)
        zs.append(model.grid.bin_of(mu).reshape(-1))
        cond = model.centroids(level, zs[-1])
    return zs


def test_trained_beats_toy_on_held_out(trained_bitswap, held_out_patches):
    _, path, _, _ = trained_bitswap
    trained = load_model(path)
    toy = toy_model(trained.depth, trained.patch_size, seed=0)
    trained_bits = toy_bits = 0.0
    for x in held_out_patches[:16]:
        trained_bits += negative_elbo(trained, x, greedy_latents(trained, x))
        toy_bits += negative_elbo(toy, x, greedy_latents(toy, x))
    assert trained_bits < toy_bits


def test_trained_model_round_trips_in_codec(trained_bitswap, held_out_patches):
    _, path, _, _ = trained_bitswap
    model = load_model(path)
    rng = np.random.default_rng(1)
    for x in held_out_patches[:4]:
        state = AnsState.from_seed_bytes(rng.bytes(8 + (1 << 16)))
        seed_copy = state.clone()
        result = bitswap_encode(model, x, state)
        decoded, restored = bitswap_decode(model, result.stream)
        assert np.array_equal(decoded, x)
        assert restored == seed_copy


def test_cli_trains_and_writes(tmp_path, capsys):
    out = tmp_path / "cli_hp.rmlw"
    rc = train_main(["hyperprior", "--out", str(out), "--steps", "30",
                     "--patch-size", "16", "--seed", "6"])
    assert rc == 0
    assert "wrote" in capsys.readouterr().out
    assert load_model(out).patch_size == 16
    out2 = tmp_path / "cli_bs.rmlw"
    rc = train_main(["bitswap", "--out", str(out2), "--steps", "30",
                     "--patch-size", "16", "--depth", "2", "--seed", "6"])
    assert rc == 0
    assert load_model(out2).depth == 2
