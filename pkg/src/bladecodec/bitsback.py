"""Lossless coding of image patches over hierarchical latent models.

Implements the interleaved schedule (encode immediately after each latent
decode) and the conventional recursive schedule (all decodes first), plus
the per-step bit accounting both need.  All bit deltas are measured on
the actual coder state, so reports reflect renormalization effects.

Stack discipline: every encode schedule has a decode schedule that is its
exact reverse with encodes and decodes swapped, which both recovers the
patch and restores the state that existed before the patch was encoded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, InitialBitsExhausted
from .hierarchy import HierarchicalModel
from .rans import AnsState

INTERLEAVED = "interleaved"
RECURSIVE = "recursive"


@dataclass
class InitBitsReport:
    """Signed bit deltas of each coding step and their summary figures."""

    deltas: list[float]
    init_bits_required: float = 0.0
    net_bits: float = 0.0

    @classmethod
    def from_deltas(cls, deltas) -> "InitBitsReport":
        cum = 0.0
        low = 0.0
        for d in deltas:
            cum += d
            low = min(low, cum)
        return cls(list(deltas), -low, cum)


@dataclass
class PatchCodeResult:
    stream: bytes | None
    report: InitBitsReport
    consumed_initial: int
    latents: list = field(default_factory=list)


def _check_patch(model, x):
    x = np.asarray(x)
    expected = (3, model.patch_size, model.patch_size)
    if x.shape != expected:
        raise ValueError(f"patch shape {x.shape}, expected {expected}")
    if x.min() < 0 or x.max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    return x.astype(np.int64)


def _encode_patch(model: HierarchicalModel, x, state: AnsState, schedule: str):
    """Run one patch through the chosen schedule; returns (deltas, latents)."""
    x = _check_patch(model, x)
    deltas = []
    latents = []
    values = []

    def run(op):
        before = state.bits()
        out = op()
        deltas.append(state.bits() - before)
        return out

    cond = model.normalize(x)
    if schedule == INTERLEAVED:
        z1 = run(lambda: model.posterior_tables(1, cond).decode_all(state))
        latents.append(z1)
        values.append(model.centroids(1, z1))
        run(lambda: model.observation_tables(values[0]).encode_all(state, x.reshape(-1)))
        for l in range(1, model.depth):
            tm = model.posterior_tables(l + 1, values[l - 1])
            z_next = run(lambda tm=tm: tm.decode_all(state))
            latents.append(z_next)
            values.append(model.centroids(l + 1, z_next))
            tm = model.likelihood_tables(l, values[l])
            run(lambda tm=tm, l=l: tm.encode_all(state, latents[l - 1]))
    elif schedule == RECURSIVE:
        feed = cond
        for l in range(1, model.depth + 1):
            z = run(lambda l=l, feed=feed: model.posterior_tables(l, feed).decode_all(state))
            latents.append(z)
            values.append(model.centroids(l, z))
            feed = values[-1]
        run(lambda: model.observation_tables(values[0]).encode_all(state, x.reshape(-1)))
        for l in range(1, model.depth):
            tm = model.likelihood_tables(l, values[l])
            run(lambda tm=tm, l=l: tm.encode_all(state, latents[l - 1]))
    else:
        raise ValueError(f"unknown schedule {schedule!r}")

    z_top = latents[-1]
    run(lambda: model.prior_tables(z_top.size).encode_all(state, z_top))
    return deltas, latents


def _decode_patch(model: HierarchicalModel, state: AnsState, schedule: str):
    """Exact stack inverse of :func:`_encode_patch`; returns the pixel patch."""
    depth = model.depth
    shp = [model.latent_shape(l) for l in range(1, depth + 1)]
    top_n = int(np.prod(shp[-1]))
    latents = [None] * depth
    values = [None] * depth

    latents[-1] = model.prior_tables(top_n).decode_all(state)
    values[-1] = model.centroids(depth, latents[-1])
    for l in range(depth - 1, 0, -1):
        latents[l - 1] = model.likelihood_tables(l, values[l]).decode_all(state)
        values[l - 1] = model.centroids(l, latents[l - 1])
        if schedule == INTERLEAVED:
            model.posterior_tables(l + 1, values[l - 1]).encode_all(state, latents[l])
    x_flat = model.observation_tables(values[0]).decode_all(state)
    x = x_flat.reshape(3, model.patch_size, model.patch_size).astype(np.uint8)
    cond = model.normalize(x)
    if schedule == INTERLEAVED:
        model.posterior_tables(1, cond).encode_all(state, latents[0])
    else:
        # Posteriors were decoded z_1 .. z_L, so they are pushed back in
        # reverse, deepest first.
        for l in range(depth, 0, -1):
            feed = cond if l == 1 else values[l - 2]
            model.posterior_tables(l, feed).encode_all(state, latents[l - 1])
    return x


def bitswap_encode(model: HierarchicalModel, x, state: AnsState) -> PatchCodeResult:
    """Encode one patch with the interleaved schedule onto ``state``."""
    seed_len = len(state.tail)
    state.min_tail_len = seed_len
    deltas, latents = _encode_patch(model, x, state, INTERLEAVED)
    return PatchCodeResult(
        state.serialize(), InitBitsReport.from_deltas(deltas),
        state.consumed_below(seed_len), latents,
    )


def recursive_encode(model: HierarchicalModel, x, state: AnsState) -> PatchCodeResult:
    """Encode one patch with all posterior decodes performed up front."""
    seed_len = len(state.tail)
    state.min_tail_len = seed_len
    deltas, latents = _encode_patch(model, x, state, RECURSIVE)
    return PatchCodeResult(
        state.serialize(), InitBitsReport.from_deltas(deltas),
        state.consumed_below(seed_len), latents,
    )


def bitswap_decode(model: HierarchicalModel, stream: bytes, n_patches: int = 1):
    """Decode patches from a serialized state; returns (patches, rest_state).

    Patches come back in the order they were encoded; the returned state
    is the seed state that existed before the first encode.
    """
    state = AnsState.deserialize(stream)
    patches = decode_chain(model, state, n_patches)
    return (patches[0] if n_patches == 1 else patches), state


def recursive_decode(model: HierarchicalModel, stream: bytes):
    state = AnsState.deserialize(stream)
    try:
        x = _decode_patch(model, state, RECURSIVE)
    except InitialBitsExhausted as exc:
        raise CorruptionError("stream truncated during decode") from exc
    return x, state


def encode_chain(model: HierarchicalModel, patches, state: AnsState):
    """Encode patches sequentially onto one state; returns per-patch results."""
    results = []
    for x in patches:
        seed_len = len(state.tail)
        state.min_tail_len = seed_len
        deltas, latents = _encode_patch(model, x, state, INTERLEAVED)
        results.append(PatchCodeResult(
            None, InitBitsReport.from_deltas(deltas),
            state.consumed_below(seed_len), latents,
        ))
    return results


def decode_chain(model: HierarchicalModel, state: AnsState, n_patches: int):
    """Decode ``n_patches`` chained patches, newest first, oldest last."""
    out = []
    try:
        for _ in range(n_patches):
            out.append(_decode_patch(model, state, INTERLEAVED))
    except InitialBitsExhausted as exc:
        raise CorruptionError("stream truncated during decode") from exc
    out.reverse()
    return out


@dataclass
class ChiBound:
    """Table-exact cost figures for one patch at fixed realized latents."""

    chi: float
    recursive_init: float
    optimized_init: float
    net_bits: float


def chi_bound(model: HierarchicalModel, x, latents) -> ChiBound:
    """Initial-bit bound chi plus both schedules' analytic init figures.

    chi adds the first posterior cost to every level's unpaid decode
    deficit ``max(0, q_{l+1} - p_{l-1})``; the interleaved schedule can
    never need more than that, the recursive schedule pays the full sum
    of posterior costs.
    """
    x = _check_patch(model, x)
    depth = model.depth
    values = [model.centroids(l + 1, latents[l]) for l in range(depth)]

    cost_q = []
    cond = model.normalize(x)
    for l in range(1, depth + 1):
        cost_q.append(model.posterior_tables(l, cond).bits_of(latents[l - 1].reshape(-1)))
        cond = values[l - 1]
    cost_p = [model.observation_tables(values[0]).bits_of(x.reshape(-1))]
    for l in range(1, depth):
        cost_p.append(model.likelihood_tables(l, values[l]).bits_of(latents[l - 1].reshape(-1)))
    z_top = latents[-1].reshape(-1)
    cost_prior = model.prior_tables(z_top.size).bits_of(z_top)

    chi = cost_q[0]
    for l in range(1, depth):
        chi += max(0.0, cost_q[l] - cost_p[l - 1])

    deltas = [-cost_q[0], cost_p[0]]
    for l in range(1, depth):
        deltas += [-cost_q[l], cost_p[l]]
    deltas.append(cost_prior)
    trace = InitBitsReport.from_deltas(deltas)
    return ChiBound(chi, sum(cost_q), trace.init_bits_required, trace.net_bits)
