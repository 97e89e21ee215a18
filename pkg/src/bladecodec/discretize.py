"""Discretization of continuous densities into codable pmfs.

Two schemes are used by the codec:

* unit bins centered on integers, with two sentinel symbols absorbing the
  distribution tails (lossy latents);
* a uniform grid of ``2**precision`` equal-width bins spanning a fixed
  interval (lossless latents).

Every emitted pmf is floored at ``PROB_FLOOR`` and renormalized, which
guarantees strictly positive frequencies after table quantization.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, floor

import numpy as np
from scipy.special import expit, ndtr

from .errors import ModelError

PROB_FLOOR = 1e-9


def clamp_and_normalize(pmf: np.ndarray) -> np.ndarray:
    """Floor pmf entries at PROB_FLOOR and renormalize to sum 1.

    The floor is reapplied after normalizing so no emitted entry sits
    below it; the reintroduced mass is far under 1e-12.
    """
    p = np.maximum(np.asarray(pmf, dtype=np.float64), PROB_FLOOR)
    return np.maximum(p / p.sum(), PROB_FLOOR)


def logistic_cdf(x):
    return expit(x)


def gaussian_cdf(x):
    return ndtr(x)


@dataclass(frozen=True)
class UnitBinPrior:
    """Pmf of an integer-quantized variable over its coding alphabet.

    The alphabet is the contiguous integer range
    ``[median - z_min - 1, median + z_max + 1]``; the two end symbols are
    sentinels holding the tail mass, so out-of-range values stay codable.
    """

    median: int
    z_min: int
    z_max: int
    pmf: np.ndarray
    tail_mass: float = PROB_FLOOR

    @property
    def first_symbol(self) -> int:
        return self.median - self.z_min - 1

    @property
    def last_symbol(self) -> int:
        return self.median + self.z_max + 1

    @property
    def alphabet_size(self) -> int:
        return self.z_min + self.z_max + 3

    def symbol_of(self, value: int) -> int:
        """Alphabet index of an integer value, clipping outliers to sentinels."""
        return int(np.clip(value, self.first_symbol, self.last_symbol)) - self.first_symbol

    def value_of(self, symbol: int) -> int:
        return self.first_symbol + symbol


def discretize_unit_bins(cdf, median: int, z_min: int, z_max: int) -> UnitBinPrior:
    """Integrate a cdf over unit bins around ``median`` into a coding pmf."""
    ks = np.arange(median - z_min, median + z_max + 1, dtype=np.float64)
    edges = np.concatenate(([ks[0] - 0.5], ks + 0.5))
    samples = np.asarray(cdf(edges), dtype=np.float64)
    if np.any(np.diff(samples) < -1e-12):
        raise ModelError("cdf samples are not monotone")
    interior = np.diff(samples)
    pmf = np.concatenate(([samples[0]], interior, [1.0 - samples[-1]]))
    return UnitBinPrior(median, z_min, z_max, clamp_and_normalize(pmf))


def unit_bin_cdf_rows(cdf_values: np.ndarray) -> np.ndarray:
    """Wrap cdf samples at interior bin edges into full (0..1) cdf rows.

    ``cdf_values`` has shape (n, alphabet - 1): the cdf at every interior
    edge, i.e. at ``median - z_min - 0.5 .. median + z_max + 0.5``.  The
    returned rows add the implicit 0 and 1 endpoints for the sentinels.
    """
    v = np.asarray(cdf_values, dtype=np.float64)
    n = v.shape[0]
    rows = np.empty((n, v.shape[1] + 2), dtype=np.float64)
    rows[:, 0] = 0.0
    rows[:, 1:-1] = v
    rows[:, -1] = 1.0
    return rows


def gaussian_unit_bin_rows(sigmas: np.ndarray, z_min: int, z_max: int) -> np.ndarray:
    """Cdf rows of zero-mean Gaussians over the unit-bin alphabet."""
    s = np.asarray(sigmas, dtype=np.float64).reshape(-1, 1)
    if np.any(s <= 0):
        raise ModelError("gaussian scale must be positive")
    edges = np.arange(-z_min - 0.5, z_max + 0.6, 1.0)
    return unit_bin_cdf_rows(ndtr(edges / s))


@dataclass(frozen=True)
class BinGrid:
    """Uniform grid of ``2**precision_bits`` equal-width bins on [lo, hi)."""

    precision_bits: int = 10
    lo: float = -8.0
    hi: float = 8.0

    @property
    def n_bins(self) -> int:
        return 1 << self.precision_bits

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    def bin_of(self, z: np.ndarray) -> np.ndarray:
        idx = np.floor((np.asarray(z) - self.lo) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.n_bins - 1)

    def centroid(self, k: np.ndarray) -> np.ndarray:
        return (self.lo + (np.asarray(k, dtype=np.float64) + 0.5) * self.width).astype(np.float32)

    def inner_edges(self) -> np.ndarray:
        return self.lo + np.arange(1, self.n_bins) * self.width


def discretize_logistic_on_grid(mu: float, sigma: float, grid: BinGrid) -> np.ndarray:
    """Pmf of a logistic(mu, sigma) over the grid bins, tails absorbed outward."""
    if sigma <= 0:
        raise ModelError("logistic scale must be positive")
    inner = expit((grid.inner_edges() - mu) / sigma)
    cdf = np.concatenate(([0.0], inner, [1.0]))
    return clamp_and_normalize(np.diff(cdf))


def logistic_grid_cdf_rows(mu: np.ndarray, sigma: np.ndarray, grid: BinGrid) -> np.ndarray:
    """Cdf rows of per-component logistics over a shared grid (bulk path).

    float32 throughout: the consumer quantizes to 16-bit tables, far
    coarser than float32 resolution.
    """
    mu = np.asarray(mu, dtype=np.float32).reshape(-1, 1)
    sigma = np.asarray(sigma, dtype=np.float32).reshape(-1, 1)
    if np.any(sigma <= 0):
        raise ModelError("logistic scale must be positive")
    rows = np.empty((mu.shape[0], grid.n_bins + 1), dtype=np.float32)
    rows[:, 0] = 0.0
    z = grid.inner_edges().astype(np.float32) - mu
    z /= sigma
    rows[:, 1:-1] = expit(z)
    rows[:, -1] = 1.0
    return rows


def _bracket(cdf, target: float) -> tuple[float, float]:
    lo, hi = -1.0, 1.0
    for _ in range(200):
        if cdf(lo) < target:
            break
        lo *= 2.0
    else:
        raise ModelError("failed to bracket lower quantile")
    for _ in range(200):
        if cdf(hi) > target:
            break
        hi *= 2.0
    else:
        raise ModelError("failed to bracket upper quantile")
    return lo, hi


def quantile(cdf, q: float, tol: float = 1e-12) -> float:
    """Invert a continuous, increasing cdf by bisection."""
    lo, hi = _bracket(cdf, q)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            return 0.5 * (lo + hi)
    raise ModelError("quantile bisection did not converge")


def tail_quantiles(cdf, tail_mass: float = PROB_FLOOR) -> tuple[float, float]:
    """Points where the cdf equals tail_mass and 1 - tail_mass."""
    return quantile(cdf, tail_mass), quantile(cdf, 1.0 - tail_mass)


def layer_tail_bounds(cdfs, tail_mass: float = PROB_FLOOR) -> tuple[int, int]:
    """Integer (z_min, z_max) covering every channel's tail quantiles.

    The bounds are the largest distances, over channels, between the
    median and each tail quantile, rounded up to whole integers.
    """
    z_min = z_max = 0
    for cdf in cdfs:
        med = quantile(cdf, 0.5)
        lo, hi = tail_quantiles(cdf, tail_mass)
        z_min = max(z_min, ceil(med - lo))
        z_max = max(z_max, ceil(hi - med))
    return z_min, z_max


@dataclass(frozen=True)
class TabulatedCdf:
    """Monotone piecewise-linear cdf given by knot positions and values."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        ys = np.asarray(self.ys, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ModelError("tabulated cdf needs matching 1-d knots")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) < 0):
            raise ModelError("tabulated cdf knots must be increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", np.clip(ys, 0.0, 1.0))

    def __call__(self, x):
        return np.interp(x, self.xs, self.ys, left=0.0, right=1.0)

    def median_int(self) -> int:
        return int(floor(quantile(self, 0.5) + 0.5))
