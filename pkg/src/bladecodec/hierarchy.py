"""Latent-variable models and their deterministic inference passes.

Two model families are defined:

* :class:`HierarchicalModel`: an L-layer Markov chain
  ``z_L -> ... -> z_1 -> x`` with logistic latent distributions on a
  shared uniform bin grid and a 256-way categorical pixel likelihood.
  This is the model the lossless coder runs on.
* :class:`HyperpriorModel`: a 2-level transform stack for the lossy
  coder; the deepest latent uses tabulated factorized priors, the first
  latent conditionally zero-mean Gaussians whose scales come from the
  hyper synthesis transform.

Forward passes are plain numpy with a fixed contraction order
(``einsum``), so repeated runs over the same weights are bit-identical,
which the lossless path depends on.  All tensors are float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import log, expm1

import numpy as np
from scipy.special import expit

from . import _kernels
from .discretize import (
    BinGrid,
    TabulatedCdf,
    layer_tail_bounds,
    logistic_grid_cdf_rows,
    unit_bin_cdf_rows,
)
from .errors import AccountingError, ConfigError, ModelError
from .rans import TableMatrix

# Lossless-path table precision: high enough that the one-unit-per-bin
# reservation of a 2**10-bin alphabet costs ~3e-4 bit/symbol.
CODER_PRECISION = 22
LOGISTIC_SIGMA_FLOOR = 1e-3
GAUSSIAN_SIGMA_FLOOR = 1e-2

PIXEL_NORM_CENTERED = 0  # x / 127.5 - 1
PIXEL_NORM_UNIT = 1      # x / 255

LAYER_KINDS = ("conv", "conv_transpose", "elu", "easn", "residual_block", "squeeze", "unsqueeze")


def softplus(x):
    return np.logaddexp(np.float32(0.0), x)


def inv_softplus(y: float) -> float:
    return log(expm1(y))


def elu(x):
    return np.where(x > 0, x, np.expm1(x)).astype(np.float32)


@dataclass
class LayerSpec:
    """One layer of a transform: kind, dimensions and flat weights."""

    kind: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ConfigError("stride must be 1 or 2")
        self.weights = np.asarray(self.weights, dtype=np.float32).reshape(-1)
        expected = self.weight_count()
        if self.weights.size != expected:
            raise ConfigError(
                f"{self.kind} layer expects {expected} weights, got {self.weights.size}"
            )

    def weight_count(self) -> int:
        if self.kind == "conv":
            return self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
        if self.kind == "conv_transpose":
            return self.in_ch * self.out_ch * self.kernel * self.kernel + self.out_ch
        if self.kind == "easn":
            c = self.in_ch
            return 2 * (c * c + c)
        if self.kind == "residual_block":
            c, k = self.in_ch, self.kernel
            return 2 * (c * c * k * k + c)
        return 0


def _conv2d(x, w, b, stride, padding):
    cin, h, wd = x.shape
    cout = w.shape[0]
    k = w.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    if stride > 1:
        win = win[:, ::stride, ::stride]
    out = np.einsum("oikl,ihwkl->ohw", w, win, dtype=np.float32, casting="same_kind")
    return (out + b[:, None, None]).astype(np.float32)


def _conv_transpose2d(x, w, b, stride, padding):
    # Zero-stuffed input convolved with the spatially flipped kernel is the
    # textbook equivalent of a transposed convolution.
    cin, h, wd = x.shape
    k = w.shape[2]
    if stride > 1:
        up = np.zeros((cin, (h - 1) * stride + 1, (wd - 1) * stride + 1), dtype=np.float32)
        up[:, ::stride, ::stride] = x
    else:
        up = x
    wf = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return _conv2d(up, wf, b, 1, k - 1 - padding)


def _easn(x, spec):
    c = spec.in_ch
    off = 0
    m_w = spec.weights[off:off + c * c].reshape(c, c); off += c * c
    m_b = spec.weights[off:off + c]; off += c
    f_w = spec.weights[off:off + c * c].reshape(c, c); off += c * c
    f_b = spec.weights[off:off + c]
    m = np.einsum("oc,chw->ohw", m_w, x, dtype=np.float32) + m_b[:, None, None]
    f = np.einsum("oc,chw->ohw", f_w, x, dtype=np.float32) + f_b[:, None, None]
    return (m * expit(f) + x).astype(np.float32)


def _residual_block(x, spec):
    c, k = spec.in_ch, spec.kernel
    n = c * c * k * k
    w1 = spec.weights[:n].reshape(c, c, k, k)
    b1 = spec.weights[n:n + c]
    w2 = spec.weights[n + c:2 * n + c].reshape(c, c, k, k)
    b2 = spec.weights[2 * n + c:]
    h = _conv2d(elu(x), w1, b1, 1, k // 2)
    h = _conv2d(elu(h), w2, b2, 1, k // 2)
    return (x + h).astype(np.float32)


def _squeeze(x, factor=2):
    c, h, w = x.shape
    if h % factor or w % factor:
        raise ConfigError("squeeze needs divisible spatial dims")
    return (
        x.reshape(c, h // factor, factor, w // factor, factor)
        .transpose(0, 2, 4, 1, 3)
        .reshape(c * factor * factor, h // factor, w // factor)
    )


def _unsqueeze(x, factor=2):
    c, h, w = x.shape
    if c % (factor * factor):
        raise ConfigError("unsqueeze needs divisible channel count")
    co = c // (factor * factor)
    return (
        x.reshape(co, factor, factor, h, w)
        .transpose(0, 3, 1, 4, 2)
        .reshape(co, h * factor, w * factor)
    )


def apply_layer(spec: LayerSpec, x: np.ndarray) -> np.ndarray:
    if spec.kind in ("conv", "conv_transpose", "easn", "residual_block") and x.shape[0] != spec.in_ch:
        raise ConfigError(f"{spec.kind} expects {spec.in_ch} channels, got {x.shape[0]}")
    if spec.kind == "conv":
        n = spec.out_ch * spec.in_ch * spec.kernel * spec.kernel
        w = spec.weights[:n].reshape(spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)
        return _conv2d(x, w, spec.weights[n:], spec.stride, spec.padding)
    if spec.kind == "conv_transpose":
        n = spec.in_ch * spec.out_ch * spec.kernel * spec.kernel
        w = spec.weights[:n].reshape(spec.in_ch, spec.out_ch, spec.kernel, spec.kernel)
        return _conv_transpose2d(x, w, spec.weights[n:], spec.stride, spec.padding)
    if spec.kind == "elu":
        return elu(x)
    if spec.kind == "easn":
        return _easn(x, spec)
    if spec.kind == "residual_block":
        return _residual_block(x, spec)
    if spec.kind == "squeeze":
        return _squeeze(x)
    return _unsqueeze(x)


def forward(layers, x: np.ndarray) -> np.ndarray:
    """Run a transform (list of layers) on a (C, H, W) float32 tensor."""
    out = np.asarray(x, dtype=np.float32)
    for spec in layers:
        out = apply_layer(spec, out)
    if not np.all(np.isfinite(out)):
        raise ModelError("non-finite activation in forward pass")
    return out


def split_params(raw: np.ndarray, sigma_floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Split a 2C-channel tensor into means and softplus-mapped scales."""
    c = raw.shape[0]
    if c % 2:
        raise ModelError("parameter tensor needs an even channel count")
    mu = raw[: c // 2]
    sigma = softplus(raw[c // 2:]) + np.float32(sigma_floor)
    return mu, sigma


# ---------------------------------------------------------------------------
# lossless model


@dataclass
class HierarchicalModel:
    """L-layer latent chain with mirrored inference/generative transforms.

    ``inference[l-1]`` maps z_{l-1} (z_0 = normalized x) to the logistic
    parameters of q(z_l | z_{l-1}); ``generative[l]`` maps z_{l+1} to the
    parameters of p(z_l | z_{l+1}), with ``generative[0]`` producing the
    pixel likelihood parameters.  The deepest prior is a standard
    logistic, identical for every component.
    """

    depth: int
    patch_size: int
    z_channels: int
    inference: list
    generative: list
    grid: BinGrid = field(default_factory=BinGrid)
    pixel_norm: int = PIXEL_NORM_CENTERED

    def __post_init__(self):
        if len(self.inference) != self.depth or len(self.generative) != self.depth:
            raise ConfigError("need one inference and one generative transform per level")
        if self.patch_size % (1 << self.depth):
            raise ConfigError("patch size must be divisible by 2**depth")
        self._prior_rows = None
        self._edges32 = None

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if self.pixel_norm == PIXEL_NORM_CENTERED:
            return x / np.float32(127.5) - np.float32(1.0)
        return x / np.float32(255.0)

    def latent_shape(self, level: int) -> tuple[int, int, int]:
        s = self.patch_size >> level
        return (self.z_channels, s, s)

    def posterior_params(self, level: int, cond_values: np.ndarray):
        raw = forward(self.inference[level - 1], cond_values)
        return split_params(raw, LOGISTIC_SIGMA_FLOOR)

    def likelihood_params(self, level: int, z_next_values: np.ndarray):
        """Parameters of p(z_level | z_level+1); level 0 is the pixel likelihood."""
        raw = forward(self.generative[level], z_next_values)
        return split_params(raw, LOGISTIC_SIGMA_FLOOR)

    # -- coding tables ------------------------------------------------------

    def _grid_edges(self) -> np.ndarray:
        if self._edges32 is None:
            self._edges32 = np.ascontiguousarray(self.grid.inner_edges(), dtype=np.float32)
        return self._edges32

    def _logistic_tables(self, mu, sigma) -> TableMatrix:
        f, c = _kernels.logistic_tables(
            np.ascontiguousarray(mu.reshape(-1), dtype=np.float32),
            np.ascontiguousarray(sigma.reshape(-1), dtype=np.float32),
            self._grid_edges(), 1 << CODER_PRECISION)
        return TableMatrix(f, c, CODER_PRECISION)

    def posterior_tables(self, level: int, cond_values: np.ndarray) -> TableMatrix:
        mu, sigma = self.posterior_params(level, cond_values)
        return self._logistic_tables(mu, sigma)

    def likelihood_tables(self, level: int, z_next_values: np.ndarray) -> TableMatrix:
        mu, sigma = self.likelihood_params(level, z_next_values)
        return self._logistic_tables(mu, sigma)

    def observation_tables(self, z1_values: np.ndarray) -> TableMatrix:
        mu, sigma = self.likelihood_params(0, z1_values)
        f, c = _kernels.logistic_tables(
            np.ascontiguousarray(mu.reshape(-1), dtype=np.float32),
            np.ascontiguousarray(sigma.reshape(-1), dtype=np.float32),
            _pixel_edges(self.pixel_norm), 1 << CODER_PRECISION)
        return TableMatrix(f, c, CODER_PRECISION)

    def prior_tables(self, n_components: int) -> TableMatrix:
        if self._prior_rows is None:
            f, c = _kernels.logistic_tables(
                np.zeros(1, dtype=np.float32), np.ones(1, dtype=np.float32),
                self._grid_edges(), 1 << CODER_PRECISION)
            self._prior_rows = (f, c)
        f, c = self._prior_rows
        return TableMatrix(f, c, CODER_PRECISION, n_components=n_components)

    def centroids(self, level: int, indices: np.ndarray) -> np.ndarray:
        return self.grid.centroid(indices).reshape(self.latent_shape(level))


_PIXEL_EDGES: dict[int, np.ndarray] = {}


def _pixel_edges(pixel_norm: int) -> np.ndarray:
    """Normalized-domain inner edges between the 256 pixel levels."""
    if pixel_norm not in _PIXEL_EDGES:
        levels = np.arange(255, dtype=np.float32) + np.float32(0.5)
        if pixel_norm == PIXEL_NORM_CENTERED:
            edges = levels / np.float32(127.5) - np.float32(1.0)
        else:
            edges = levels / np.float32(255.0)
        _PIXEL_EDGES[pixel_norm] = np.ascontiguousarray(edges)
    return _PIXEL_EDGES[pixel_norm]


def pixel_cdf_rows(mu: np.ndarray, sigma: np.ndarray, pixel_norm: int) -> np.ndarray:
    """Cdf rows of the 256-way pixel categorical (discretized logistic)."""
    edges = _pixel_edges(pixel_norm)
    mu = np.asarray(mu, dtype=np.float32).reshape(-1, 1)
    sigma = np.asarray(sigma, dtype=np.float32).reshape(-1, 1)
    z = edges - mu
    z /= sigma
    rows = np.empty((mu.shape[0], 257), dtype=np.float32)
    rows[:, 0] = 0.0
    rows[:, 1:-1] = expit(z)
    rows[:, -1] = 1.0
    return rows


def negative_elbo(model: HierarchicalModel, x: np.ndarray, latents: list[np.ndarray]) -> float:
    """Net code length (bits) of a patch given realized latent bin indices.

    Evaluates the table-quantized distributions the coder actually uses,
    so the result matches the measured net stream growth up to
    renormalization slack.
    """
    if len(latents) != model.depth:
        raise AccountingError("one latent tensor per level required")
    for z in latents:
        z = np.asarray(z)
        if np.any(z < 0) or np.any(z >= model.grid.n_bins):
            raise AccountingError("latent index outside the bin grid")
    values = [model.centroids(l + 1, latents[l]) for l in range(model.depth)]
    x = np.asarray(x, dtype=np.int64)

    bits = model.observation_tables(values[0]).bits_of(x.reshape(-1))
    for l in range(1, model.depth):
        tm = model.likelihood_tables(l, values[l])
        bits += tm.bits_of(np.asarray(latents[l - 1]).reshape(-1))
    z_top = np.asarray(latents[-1]).reshape(-1)
    bits += model.prior_tables(z_top.size).bits_of(z_top)

    cond = model.normalize(x)
    for l in range(1, model.depth + 1):
        tm = model.posterior_tables(l, cond)
        bits -= tm.bits_of(np.asarray(latents[l - 1]).reshape(-1))
        cond = values[l - 1]
    return float(bits)


# ---------------------------------------------------------------------------
# lossy model


@dataclass
class HyperpriorModel:
    """2-level transform stack for the lossy path.

    ``analysis`` maps the normalized image to z_1, ``hyper_analysis`` maps
    quantized z_1 to z_2.  ``hyper_synthesis`` maps quantized z_2 to raw
    scale parameters for the zero-mean Gaussian model of z_1, and
    ``synthesis`` maps quantized z_1 back to the image domain.
    """

    patch_size: int
    z1_channels: int
    z2_channels: int
    analysis: list
    hyper_analysis: list
    hyper_synthesis: list
    synthesis: list
    prior_cdfs: list[TabulatedCdf]
    zeta: float = 0.01
    pixel_norm: int = PIXEL_NORM_UNIT

    def __post_init__(self):
        if len(self.prior_cdfs) != self.z2_channels:
            raise ConfigError("one tabulated prior cdf per deep-latent channel")
        self._z2_stats = None

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if self.pixel_norm == PIXEL_NORM_UNIT:
            return x / np.float32(255.0)
        return x / np.float32(127.5) - np.float32(1.0)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        if self.pixel_norm == PIXEL_NORM_UNIT:
            v = x * 255.0
        else:
            v = (x + 1.0) * 127.5
        return np.clip(np.rint(v), 0, 255).astype(np.uint8)

    def scales_for_z1(self, z2_values: np.ndarray) -> np.ndarray:
        raw = forward(self.hyper_synthesis, z2_values)
        if raw.shape[0] != self.z1_channels:
            raise ModelError("hyper synthesis must emit one scale per z1 channel")
        return np.maximum(softplus(raw), np.float32(GAUSSIAN_SIGMA_FLOOR))

    def z2_prior_stats(self):
        """Per-channel integer medians plus layer-wide (z_min, z_max)."""
        if self._z2_stats is None:
            medians = [cdf.median_int() for cdf in self.prior_cdfs]
            centered = [
                (lambda x, c=cdf, m=med: c(np.asarray(x, dtype=np.float64) + m))
                for cdf, med in zip(self.prior_cdfs, medians)
            ]
            z_min, z_max = layer_tail_bounds(centered)
            self._z2_stats = (medians, z_min, z_max)
        return self._z2_stats


def _box_conv(rng, in_ch, out_ch, scale=1.0, jitter=0.01, bias=None, sigma_bias=None):
    """Seeded 2x2 stride-2 box convolution; optional sigma half."""
    k = 2
    w = np.zeros((out_ch, in_ch, k, k), dtype=np.float64)
    for o in range(out_ch):
        base = np.full((in_ch, k, k), 1.0 / (in_ch * k * k))
        w[o] = base * scale * (1.0 + jitter * rng.standard_normal((in_ch, k, k)))
    b = np.zeros(out_ch, dtype=np.float64)
    if bias is not None:
        b[:] = bias
    flat = np.concatenate([w.reshape(-1), b])
    return LayerSpec("conv", in_ch, out_ch, k, 2, 0, flat.astype(np.float32))


def _nearest_deconv(rng, in_ch, out_ch, scale=1.0, jitter=0.01, bias=None):
    """Seeded 2x2 stride-2 transposed convolution (nearest-style upsample)."""
    k = 2
    w = np.zeros((in_ch, out_ch, k, k), dtype=np.float64)
    for o in range(out_ch):
        base = np.full((in_ch, k, k), 1.0 / in_ch)
        w[:, o] = base * scale * (1.0 + jitter * rng.standard_normal((in_ch, k, k)))
    b = np.zeros(out_ch, dtype=np.float64)
    if bias is not None:
        b[:] = bias
    flat = np.concatenate([w.reshape(-1), b])
    return LayerSpec("conv_transpose", in_ch, out_ch, k, 2, 0, flat.astype(np.float32))


def _param_conv(rng, in_ch, z_ch, mu_scale, sigma_value, jitter, floor):
    """Box conv emitting (mu, raw sigma) with sigma pinned near sigma_value."""
    spec = _box_conv(rng, in_ch, 2 * z_ch, scale=mu_scale, jitter=jitter)
    w = spec.weights.copy()
    n = 2 * z_ch * in_ch * 4
    wm = w[:n].reshape(2 * z_ch, in_ch, 2, 2)
    wm[z_ch:] = 0.0
    w[n + z_ch:] = inv_softplus(max(sigma_value - floor, 1e-4))
    return LayerSpec("conv", in_ch, 2 * z_ch, 2, 2, 0, w)


def _param_deconv(rng, z_ch, out_ch, mu_scale, sigma_value, jitter, floor):
    spec = _nearest_deconv(rng, z_ch, 2 * out_ch, scale=mu_scale, jitter=jitter)
    w = spec.weights.copy()
    n = z_ch * 2 * out_ch * 4
    wm = w[:n].reshape(z_ch, 2 * out_ch, 2, 2)
    wm[:, out_ch:] = 0.0
    w[n + out_ch:] = inv_softplus(max(sigma_value - floor, 1e-4))
    return LayerSpec("conv_transpose", z_ch, 2 * out_ch, 2, 2, 0, w)


def toy_model(depth: int, patch_size: int, seed: int = 0) -> HierarchicalModel:
    """Analytically defined hierarchical model; no training required.

    Inference means are box-filter downsamples, generative means nearest
    upsamples, scales are constant.  Deterministic for a given seed.
    """
    if not 1 <= depth <= 4:
        raise ConfigError("depth must be in 1..4")
    if patch_size % (1 << depth):
        raise ConfigError("patch size must be divisible by 2**depth")
    rng = np.random.default_rng(seed)
    zc = 2
    inference = []
    generative = []
    for level in range(1, depth + 1):
        in_ch = 3 if level == 1 else zc
        inference.append([_param_conv(rng, in_ch, zc, 1.0, 0.25, 0.01, LOGISTIC_SIGMA_FLOOR)])
    generative.append([_param_deconv(rng, zc, 3, 1.0, 0.1, 0.01, LOGISTIC_SIGMA_FLOOR)])
    for level in range(1, depth):
        generative.append([_param_deconv(rng, zc, zc, 1.0, 0.3, 0.01, LOGISTIC_SIGMA_FLOOR)])
    return HierarchicalModel(depth, patch_size, zc, inference, generative)


def _easn_layer(rng, ch, strength=0.05):
    m_w = strength * rng.standard_normal((ch, ch))
    m_b = np.zeros(ch)
    f_w = strength * rng.standard_normal((ch, ch))
    f_b = np.zeros(ch)
    flat = np.concatenate([m_w.reshape(-1), m_b, f_w.reshape(-1), f_b])
    return LayerSpec("easn", ch, ch, 0, 1, 0, flat.astype(np.float32))


def toy_hyperprior(patch_size: int, seed: int = 0, zeta: float = 0.01,
                   latent_scale: float = 20.0) -> HyperpriorModel:
    """Analytically defined 2-level lossy model for a given patch size."""
    if patch_size % 8:
        raise ConfigError("patch size must be divisible by 8")
    rng = np.random.default_rng(seed)
    hidden, c1, c2 = 8, 4, 2
    analysis = [
        _box_conv(rng, 3, hidden, scale=1.0, jitter=0.02),
        _easn_layer(rng, hidden),
        _box_conv(rng, hidden, c1, scale=latent_scale, jitter=0.02, bias=-latent_scale / 2),
    ]
    hyper_analysis = [_box_conv(rng, c1, c2, scale=0.5, jitter=0.02)]
    hyper_synthesis = [
        _nearest_deconv(rng, c2, c1, scale=0.05, jitter=0.02, bias=inv_softplus(3.0)),
    ]
    synthesis = [
        _nearest_deconv(rng, c1, hidden, scale=1.0 / latent_scale, jitter=0.02,
                        bias=0.5 / latent_scale),
        _easn_layer(rng, hidden),
        _nearest_deconv(rng, hidden, 3, scale=1.0, jitter=0.02),
    ]
    lo, hi = -latent_scale, latent_scale
    knots = np.linspace(lo, hi, 129)
    prior_cdfs = [
        TabulatedCdf(knots, np.asarray(expit((knots - 0.0) / (latent_scale / 8))))
        for _ in range(c2)
    ]
    return HyperpriorModel(
        patch_size, c1, c2, analysis, hyper_analysis, hyper_synthesis, synthesis,
        prior_cdfs, zeta=zeta,
    )
