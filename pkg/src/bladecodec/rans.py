"""Stack-semantics rANS entropy coder over fixed frequency tables.

The coder state is a 64-bit integer head plus a byte stack (the tail).
Renormalization moves 32-bit chunks between head and tail so that after
every encode the head lies in ``[2**32, 2**64)``.  Decoding pops symbols
in the reverse order they were pushed (LIFO), which is what bits-back
coding requires.

Two layers are exposed:

* ``step_encode`` / ``step_decode`` operate on an unbounded natural
  number state.  They implement the textbook update
  ``s' = M * (s // f_i) + B_i + (s % f_i)`` and its inverse with no
  renormalization, and are mainly useful for small worked examples and
  cross-checks.
* ``rans_encode`` / ``rans_decode`` operate on :class:`AnsState` and are
  the streaming coder used everywhere else.

Frequency tables are built either one distribution at a time with
:func:`table_from_pmf` (largest-remainder apportionment) or in bulk from
cumulative distributions with :func:`quantize_cdf_rows`, which is the
fast path used when coding whole latent layers.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from math import log2

import numpy as np

from . import _kernels
from .errors import CapacityError, InitialBitsExhausted

HEAD_BITS = 64
RENORM_BITS = 32
HEAD_MIN = 1 << RENORM_BITS
_WORD_MASK = (1 << RENORM_BITS) - 1

MAX_PRECISION = 16       # scalar tables; kept at the classic range-coder cap
MAX_BULK_PRECISION = 24  # per-layer table matrices; f stays exact in float32


@dataclass(frozen=True)
class CodingTable:
    """Scaled integer frequencies for one discrete distribution.

    ``freqs[i] >= 1`` for every symbol, ``sum(freqs) == 2**precision_bits``
    and ``cumfreqs`` holds the exclusive prefix sums starting at zero.
    """

    precision_bits: int
    freqs: tuple[int, ...]
    cumfreqs: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 1 <= self.precision_bits <= MAX_PRECISION:
            raise CapacityError(f"precision_bits {self.precision_bits} outside [1, {MAX_PRECISION}]")
        m = 1 << self.precision_bits
        if len(self.freqs) > m:
            raise CapacityError(f"{len(self.freqs)} symbols do not fit precision {self.precision_bits}")
        if any(f < 1 for f in self.freqs):
            raise ValueError("zero-frequency symbol in coding table")
        if sum(self.freqs) != m:
            raise ValueError(f"frequencies sum to {sum(self.freqs)}, expected {m}")
        if not self.cumfreqs:
            cums = []
            acc = 0
            for f in self.freqs:
                cums.append(acc)
                acc += f
            object.__setattr__(self, "cumfreqs", tuple(cums))

    @property
    def alphabet_size(self) -> int:
        return len(self.freqs)

    @property
    def multiplier(self) -> int:
        return 1 << self.precision_bits

    def bits(self, symbol: int) -> float:
        """Ideal code length of ``symbol`` in bits under this table."""
        return self.precision_bits - log2(self.freqs[symbol])


def table_from_pmf(pmf, precision_bits: int) -> CodingTable:
    """Quantize a probability vector to integer frequencies summing to 2**precision_bits.

    Uses largest-remainder apportionment and then repairs any zero entries
    by borrowing from the largest ones, so every symbol stays codable.
    """
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("pmf must be a non-empty 1-d sequence")
    if np.any(p < -1e-12):
        raise ValueError("pmf has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"pmf sums to {total}, expected 1 within 1e-6")
    m = 1 << precision_bits
    if p.size > m:
        raise CapacityError(f"alphabet of {p.size} exceeds 2**{precision_bits}")

    target = np.clip(p, 0.0, None) / total * m
    f = np.floor(target).astype(np.int64)
    remainder = target - f
    leftover = m - int(f.sum())
    if leftover > 0:
        # Stable sort so remainder ties break toward lower symbol indices.
        order = np.argsort(-remainder, kind="stable")
        f[order[:leftover]] += 1

    # Zero repair: every symbol must stay codable.
    for i in np.nonzero(f == 0)[0]:
        f[i] = 1
        j = int(np.argmax(f))
        f[j] -= 1
    return CodingTable(precision_bits, tuple(int(v) for v in f))


def step_encode(state: int, symbol: int, table: CodingTable) -> int:
    """One exact-arithmetic encode step on an unbounded integer state."""
    f = table.freqs[symbol]
    return table.multiplier * (state // f) + table.cumfreqs[symbol] + (state % f)


def step_decode(state: int, table: CodingTable) -> tuple[int, int]:
    """Inverse of :func:`step_encode`; returns ``(symbol, previous_state)``."""
    m = table.multiplier
    r = state % m
    symbol = bisect_right(table.cumfreqs, r) - 1
    prev = table.freqs[symbol] * (state // m) + r - table.cumfreqs[symbol]
    return symbol, prev


class AnsState:
    """Mutable coder state: 64-bit head plus LIFO byte tail.

    The tail grows at the end of the bytearray; pops also happen at the
    end.  ``min_tail_len`` tracks the deepest point ever popped to, which
    is how callers measure how many seed bytes a bits-back run consumed.
    """

    __slots__ = ("head", "tail", "min_tail_len")

    def __init__(self, head: int = HEAD_MIN, tail: bytes | bytearray = b""):
        if not HEAD_MIN <= head < (1 << HEAD_BITS):
            raise ValueError("head outside renormalization interval")
        self.head = head
        self.tail = bytearray(tail)
        self.min_tail_len = len(self.tail)

    @classmethod
    def from_seed_bytes(cls, seed: bytes) -> "AnsState":
        """Build a state whose refill bytes come from ``seed`` in order.

        The first 8 seed bytes initialize the head; the rest are stacked so
        that pops consume them front to back.
        """
        if len(seed) < 8:
            raise ValueError("seed must supply at least 8 bytes")
        head = int.from_bytes(seed[:8], "big")
        if head < HEAD_MIN:
            head += HEAD_MIN
        return cls(head, bytes(reversed(seed[8:])))

    def clone(self) -> "AnsState":
        c = AnsState.__new__(AnsState)
        c.head = self.head
        c.tail = bytearray(self.tail)
        c.min_tail_len = len(c.tail)
        return c

    def __eq__(self, other):
        if not isinstance(other, AnsState):
            return NotImplemented
        return self.head == other.head and self.tail == other.tail

    def bits(self) -> float:
        """Current stream length in (fractional) bits."""
        return 8.0 * len(self.tail) + log2(self.head)

    def consumed_below(self, initial_len: int) -> int:
        """Bytes consumed from below ``initial_len`` tail bytes."""
        return max(0, initial_len - self.min_tail_len)

    def serialize(self) -> bytes:
        """Final head as 8 big-endian bytes, then tail bytes in pop order."""
        return self.head.to_bytes(8, "big") + bytes(reversed(self.tail))

    @classmethod
    def deserialize(cls, blob: bytes) -> "AnsState":
        if len(blob) < 8:
            raise ValueError("serialized state shorter than its 8-byte head")
        head = int.from_bytes(blob[:8], "big")
        return cls(head, bytes(reversed(blob[8:])))

    def _pop_word(self) -> int:
        if len(self.tail) < 4:
            raise InitialBitsExhausted("byte stack empty during decode refill")
        w = int.from_bytes(self.tail[-4:], "little")
        del self.tail[-4:]
        if len(self.tail) < self.min_tail_len:
            self.min_tail_len = len(self.tail)
        return w


def rans_encode(state: AnsState, symbol: int, table: CodingTable) -> AnsState:
    """Push one symbol; the head stays inside [2**32, 2**64)."""
    f = table.freqs[symbol]
    head = state.head
    if head >= f << (HEAD_BITS - table.precision_bits):
        state.tail += (head & _WORD_MASK).to_bytes(4, "little")
        head >>= RENORM_BITS
    state.head = ((head // f) << table.precision_bits) + table.cumfreqs[symbol] + (head % f)
    return state


def rans_decode(state: AnsState, table: CodingTable) -> int:
    """Pop the most recently pushed symbol (or sample from fresh tail bytes)."""
    m_mask = table.multiplier - 1
    head = state.head
    r = head & m_mask
    symbol = bisect_right(table.cumfreqs, r) - 1
    head = table.freqs[symbol] * (head >> table.precision_bits) + r - table.cumfreqs[symbol]
    if head < HEAD_MIN:
        head = (head << RENORM_BITS) | state._pop_word()
    state.head = head
    return symbol


def quantize_cdf_rows(cdf_rows: np.ndarray, precision_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Turn per-row cumulative distributions into integer frequency tables.

    ``cdf_rows`` has shape (n, A + 1) with each row nondecreasing from 0 to 1.
    Returns ``(freqs, cums)`` of shape (n, A) where every frequency is >= 1
    and each row sums to ``2**precision_bits``.  The construction rounds the
    scaled cdf and then projects it onto strictly increasing integer
    sequences, which keeps high-probability bins accurate to 1/2**precision.
    """
    rows = np.asarray(cdf_rows)
    if rows.ndim != 2 or rows.shape[1] < 2:
        raise ValueError("cdf_rows must be (n, alphabet+1)")
    if not 1 <= precision_bits <= MAX_BULK_PRECISION:
        raise CapacityError(f"precision_bits {precision_bits} outside [1, {MAX_BULK_PRECISION}]")
    n, edges = rows.shape
    alphabet = edges - 1
    m = 1 << precision_bits
    if alphabet > m:
        raise CapacityError(f"alphabet of {alphabet} exceeds 2**{precision_bits}")
    ramp = np.arange(edges, dtype=np.int32)
    # One table unit is reserved per bin up front (scale by m - alphabet,
    # then add the strictly increasing bin ramp), so the f >= 1 floor is
    # spread evenly instead of being carved out wherever the cdf
    # saturates.  m <= 2**24 keeps the float32 rounding exact; the cummax
    # only guards against sub-ulp cdf wobble.
    b = np.rint(rows.astype(np.float32, copy=False) * np.float32(m - alphabet)).astype(np.int32)
    np.maximum.accumulate(b, axis=1, out=b)
    b += ramp
    freqs = np.diff(b, axis=1)
    return freqs, b[:, :-1]


class TableMatrix:
    """Per-component coding tables for one layer, sharing an alphabet.

    A matrix of a single row with ``n_components > 1`` codes every
    component with that shared table (used for i.i.d. priors).
    """

    __slots__ = ("freqs", "cums", "precision_bits", "n_components")

    def __init__(self, freqs: np.ndarray, cums: np.ndarray, precision_bits: int,
                 n_components: int | None = None):
        self.freqs = np.ascontiguousarray(freqs, dtype=np.int32)
        self.cums = np.ascontiguousarray(cums, dtype=np.int32)
        self.precision_bits = precision_bits
        self.n_components = self.freqs.shape[0] if n_components is None else n_components
        if self.freqs.shape[0] not in (1, self.n_components):
            raise ValueError("need one table row per component, or a single shared row")

    @classmethod
    def from_cdf_rows(cls, cdf_rows: np.ndarray, precision_bits: int) -> "TableMatrix":
        freqs, cums = quantize_cdf_rows(cdf_rows, precision_bits)
        return cls(freqs, cums, precision_bits)

    @property
    def alphabet_size(self) -> int:
        return self.freqs.shape[1]

    @property
    def _single_row(self) -> bool:
        return self.freqs.shape[0] == 1

    def row_table(self, i: int) -> CodingTable:
        return CodingTable(self.precision_bits, tuple(int(v) for v in self.freqs[i]))

    def _rows(self, symbols: np.ndarray) -> np.ndarray:
        return np.zeros(symbols.shape[0], dtype=np.int64) if self._single_row \
            else np.arange(symbols.shape[0])

    def bits_of(self, symbols: np.ndarray) -> float:
        """Total ideal code length of one symbol per component, in bits."""
        symbols = np.asarray(symbols, dtype=np.int64)
        if symbols.shape[0] != self.n_components:
            raise ValueError("one symbol per component required")
        if symbols.size and (symbols.min() < 0 or symbols.max() >= self.alphabet_size):
            raise IndexError("symbol outside table alphabet")
        f = self.freqs[self._rows(symbols), symbols]
        return float(self.n_components * self.precision_bits - np.log2(f).sum())

    def encode_all(self, state: AnsState, symbols: np.ndarray) -> None:
        """Encode one symbol per component, last component pushed first.

        Decoding with :meth:`decode_all` then yields components in forward
        order.
        """
        symbols = np.ascontiguousarray(symbols, dtype=np.int64)
        if symbols.shape[0] != self.n_components:
            raise ValueError("one symbol per component required")
        if symbols.size and (symbols.min() < 0 or symbols.max() >= self.alphabet_size):
            raise IndexError("symbol outside table alphabet")
        out_words = np.empty(max(1, symbols.shape[0]), dtype=np.uint32)
        head, count = _kernels.encode_symbols(
            np.uint64(state.head), symbols, self.freqs, self.cums,
            self.precision_bits, self._single_row, out_words)
        state.head = int(head)
        if count:
            state.tail += out_words[:count].astype("<u4").tobytes()

    def decode_all(self, state: AnsState) -> np.ndarray:
        """Decode one symbol per component in forward component order."""
        out = np.empty(self.n_components, dtype=np.int64)
        if state.tail:
            tail_view = np.frombuffer(state.tail, dtype=np.uint8)
        else:
            tail_view = np.empty(0, dtype=np.uint8)
        head, tail_len, ok = _kernels.decode_symbols(
            np.uint64(state.head), tail_view, len(state.tail), self.freqs, self.cums,
            self.precision_bits, self._single_row, out)
        tail_view = None  # release the buffer before resizing the bytearray
        if ok < 0:
            raise InitialBitsExhausted("byte stack empty during decode refill")
        state.head = int(head)
        del state.tail[tail_len:]
        if tail_len < state.min_tail_len:
            state.min_tail_len = tail_len
        return out
