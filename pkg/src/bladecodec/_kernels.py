"""Numba kernels for the bulk coding paths.

These fuse cdf evaluation, 16-bit table quantization and the per-symbol
coder loops.  The integer projection here is step-for-step identical to
:func:`bladecodec.rans.quantize_cdf_rows` (sequential form of the same
cummax-and-clamp recursion), so tables built either way agree whenever
the cdf values agree.
"""

import numpy as np
from numba import njit, prange

_U64_1 = np.uint64(1)
_U64_8 = np.uint64(8)
_U64_16 = np.uint64(16)
_U64_24 = np.uint64(24)
_U64_32 = np.uint64(32)
_HEAD_MIN = _U64_1 << _U64_32
_WORD_MASK = np.uint64(0xFFFFFFFF)


@njit(cache=True, parallel=True)
def logistic_tables(mu, sigma, edges, m):
    """Quantized logistic-cdf tables, one row per (mu, sigma) pair.

    ``edges`` holds the alphabet's inner bin edges; the outer bins absorb
    both tails.  One table unit per bin is reserved up front (the cdf is
    scaled by ``m - alphabet`` and a unit ramp added), which keeps every
    frequency >= 1 without distorting tail bins.  Rows sum to ``m``.
    This is the sequential form of :func:`bladecodec.rans.quantize_cdf_rows`.
    """
    n = mu.shape[0]
    alphabet = edges.shape[0] + 1
    freqs = np.empty((n, alphabet), np.int32)
    cums = np.empty((n, alphabet), np.int32)
    scale = np.float32(m - alphabet)
    one = np.float32(1.0)
    for i in prange(n):
        mi = mu[i]
        si = sigma[i]
        prev_edge = 0
        run_max = 0
        for k in range(alphabet):
            if k == alphabet - 1:
                b = m - alphabet
            else:
                z = (edges[k] - mi) / si
                c = one / (one + np.exp(-z))
                b = int(np.rint(c * scale))
            if b > run_max:
                run_max = b
            edge = run_max + k + 1
            freqs[i, k] = edge - prev_edge
            cums[i, k] = prev_edge
            prev_edge = edge
    return freqs, cums


@njit(cache=True)
def encode_symbols(head, syms, freqs, cums, precision, single_row, out_words):
    """Push one symbol per row, last row first; returns (head, word_count)."""
    n = syms.shape[0]
    count = 0
    p = np.uint64(precision)
    shift = np.uint64(64) - p
    for j in range(n - 1, -1, -1):
        ri = 0 if single_row else j
        s = syms[j]
        f = np.uint64(freqs[ri, s])
        b = np.uint64(cums[ri, s])
        if head >= f << shift:
            out_words[count] = np.uint32(head & _WORD_MASK)
            count += 1
            head >>= _U64_32
        head = ((head // f) << p) + b + (head % f)
    return head, count


@njit(cache=True)
def decode_symbols(head, tail, tail_len, freqs, cums, precision, single_row, out_syms):
    """Pop one symbol per row in forward order.

    Returns (head, tail_len, ok); ok < 0 flags refill exhaustion, in which
    case the caller must discard all outputs.
    """
    n = out_syms.shape[0]
    p = np.uint64(precision)
    mask = (_U64_1 << p) - _U64_1
    alphabet = freqs.shape[1]
    for j in range(n):
        ri = 0 if single_row else j
        r = head & mask
        r32 = np.int32(r)
        lo = 0
        hi = alphabet - 1
        while lo < hi:
            mid = (lo + hi + 1) >> 1
            if cums[ri, mid] <= r32:
                lo = mid
            else:
                hi = mid - 1
        head = np.uint64(freqs[ri, lo]) * (head >> p) + r - np.uint64(cums[ri, lo])
        if head < _HEAD_MIN:
            if tail_len < 4:
                return head, tail_len, -1
            w = (np.uint64(tail[tail_len - 4])
                 | (np.uint64(tail[tail_len - 3]) << _U64_8)
                 | (np.uint64(tail[tail_len - 2]) << _U64_16)
                 | (np.uint64(tail[tail_len - 1]) << _U64_24))
            tail_len -= 4
            head = (head << _U64_32) | w
        out_syms[j] = lo
    return head, tail_len, 0
