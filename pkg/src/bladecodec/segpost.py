"""Segmentation mask post-processing and robustness evaluation.

The cleanup pipeline is: threshold the network probability map, fill
holes (orientation-aware, border-touching holes included), train a small
random forest on all images of the same blade surface, soft-vote its
probabilities with the network's, threshold, and fill once more.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

TAU_BU = 0.255
TAU_RF = 0.37

HORIZONTAL = "horizontal"
VERTICAL = "vertical"

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance of a (3, H, W) or (H, W) array."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def estimate_orientation(image: np.ndarray) -> str:
    """Blade orientation from accumulated Sobel gradients.

    A higher accumulated gradient along x means strong vertical edges,
    i.e. a vertically traversing blade.  Ties fall back to horizontal.
    """
    gray = to_gray(image)
    gx = np.abs(ndimage.sobel(gray, axis=1)).sum()
    gy = np.abs(ndimage.sobel(gray, axis=0)).sum()
    return VERTICAL if gx > gy else HORIZONTAL


def fill_holes(mask: np.ndarray, orientation: str) -> np.ndarray:
    """Fill background regions enclosed by blade pixels and image borders.

    The two borders the blade traverses are first made contiguous between
    their outermost blade pixels.  Background is then flood-filled from
    border pixels lying outside the blade's span across the orientation
    axis; unreachable background becomes blade.  Only 0 -> 1 flips happen,
    and a second application is a no-op.
    """
    m = np.asarray(mask).astype(bool).copy()
    if orientation not in (HORIZONTAL, VERTICAL):
        raise ValueError(f"unknown orientation {orientation!r}")
    if orientation == VERTICAL:
        return fill_holes(m.T, HORIZONTAL).T.astype(np.uint8)

    h, w = m.shape
    for col in (0, w - 1):
        rows = np.nonzero(m[:, col])[0]
        if rows.size:
            m[rows[0]:rows[-1] + 1, col] = True

    blade_rows = np.nonzero(m.any(axis=1))[0]
    seeds = np.zeros_like(m)
    seeds[0, :] = seeds[-1, :] = True
    seeds[:, 0] = seeds[:, -1] = True
    if blade_rows.size:
        seeds[blade_rows[0]:blade_rows[-1] + 1, :] = False
        seeds[:blade_rows[0], :] = True
        seeds[blade_rows[-1] + 1:, :] = True
        # Rows outside the span hold no blade, so any border pixel there
        # reaches the whole row; the border columns within the span are
        # sealed by the connection step above.
    seeds &= ~m

    background = ~m
    labels, n = ndimage.label(background, structure=_CROSS)
    if n:
        reachable = np.unique(labels[seeds & background])
        keep = np.isin(labels, reachable[reachable > 0])
        m |= background & ~keep
    return m.astype(np.uint8)


# ---------------------------------------------------------------------------
# random forest


def neighbor_offsets(n: int, d: int) -> list[tuple[int, int]]:
    """Center plus the 4 axis neighbors at distances d, 2d, .. nd."""
    offs = [(0, 0)]
    for i in range(1, n + 1):
        offs += [(-i * d, 0), (i * d, 0), (0, -i * d), (0, i * d)]
    return offs


def pixel_features(image: np.ndarray, n: int, d: int) -> np.ndarray:
    """Per-pixel RGB features of the center and its axis neighbors.

    Out-of-bounds neighbors come from mirror padding, so every pixel has
    the full feature set.  Returns (H*W, 3*(1+4n)) float32.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("image must be (3, H, W)")
    pad = n * d
    cols = []
    if pad:
        padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="symmetric")
    else:
        padded = img
    h, w = img.shape[1:]
    for dy, dx in neighbor_offsets(n, d):
        view = padded[:, pad + dy:pad + dy + h, pad + dx:pad + dx + w]
        cols.append(view.reshape(3, -1))
    return np.concatenate(cols, axis=0).T.copy()


class _Tree:
    """CART tree on float features with Gini splits, stored as flat arrays."""

    __slots__ = ("feature", "threshold", "left", "right", "prob")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.prob: list[float] = []

    def _leaf(self, y) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.prob.append(float(y.mean()) if y.size else 0.0)
        return len(self.prob) - 1

    def _grow(self, X, y, depth, max_depth, n_feats, rng) -> int:
        if depth >= max_depth or y.size < 2 or y.min() == y.max():
            return self._leaf(y)
        total = y.size
        features = rng.choice(X.shape[1], size=n_feats, replace=False)
        best = None
        for f in features:
            vals = X[:, f]
            order = np.argsort(vals, kind="stable")
            vs = vals[order]
            ys = y[order]
            pos = np.cumsum(ys)
            idx = np.nonzero(np.diff(vs) > 0)[0]
            if idx.size == 0:
                continue
            nl = idx + 1
            nr = total - nl
            pl = pos[idx]
            pr = pos[-1] - pl
            gini = (nl - pl ** 2 / nl - (nl - pl) ** 2 / nl
                    + nr - pr ** 2 / nr - (nr - pr) ** 2 / nr)
            k = int(np.argmin(gini))
            score = float(gini[k])
            if best is None or score < best[0] - 1e-12:
                thr = 0.5 * (vs[idx[k]] + vs[idx[k] + 1])
                best = (score, int(f), float(thr))
        if best is None:
            return self._leaf(y)
        _, f, thr = best
        mask = X[:, f] <= thr
        node = self._leaf(y)  # placeholder slot, repurposed as internal node
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self._grow(X[mask], y[mask], depth + 1, max_depth, n_feats, rng)
        self.right[node] = self._grow(X[~mask], y[~mask], depth + 1, max_depth, n_feats, rng)
        return node

    def fit(self, X, y, max_depth, n_feats, rng):
        self._grow(X, y, 0, max_depth, n_feats, rng)
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.prob = np.asarray(self.prob, dtype=np.float64)
        return self

    def predict(self, X) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.float64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = self.prob[node]
                continue
            mask = X[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[mask]))
            stack.append((self.right[node], idx[~mask]))
        return out


@dataclass
class DecisionForest:
    trees: list
    neigh_n: int
    neigh_d: int
    seed: int

    def predict_proba(self, image: np.ndarray) -> np.ndarray:
        X = pixel_features(image, self.neigh_n, self.neigh_d)
        acc = np.zeros(X.shape[0], dtype=np.float64)
        for t in self.trees:
            acc += t.predict(X)
        h, w = np.asarray(image).shape[1:]
        return (acc / len(self.trees)).reshape(h, w)


N_TREES = 5
MAX_DEPTH = 4


def forest_fit(images, masks, neigh_spec=(1, 1), seed: int = 0) -> DecisionForest:
    """Fit the denoising forest on all images of one blade surface.

    Trees are trained on bootstrap resamples with sqrt-of-features
    subsampling per split; everything derives from ``seed``.
    """
    if not images or len(images) != len(masks):
        raise ValueError("need equally many images and masks")
    n, d = neigh_spec
    X = np.concatenate([pixel_features(img, n, d) for img in images], axis=0)
    y = np.concatenate([np.asarray(m).reshape(-1).astype(np.float64) for m in masks])
    if X.shape[0] != y.shape[0]:
        raise ValueError("mask sizes do not match their images")
    n_feats = max(1, int(round(np.sqrt(X.shape[1]))))
    streams = np.random.SeedSequence(seed).spawn(N_TREES)
    trees = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        pick = rng.integers(0, X.shape[0], size=X.shape[0])
        trees.append(_Tree().fit(X[pick], y[pick], MAX_DEPTH, n_feats, rng))
    return DecisionForest(trees, n, d, seed)


def ensemble_predict(forest: DecisionForest, image, bu_probs, tau_rf: float = TAU_RF) -> np.ndarray:
    """Soft vote of forest and network probabilities, then threshold."""
    bu = np.asarray(bu_probs, dtype=np.float64)
    p_rf = forest.predict_proba(image)
    if p_rf.shape != bu.shape:
        raise ValueError("probability map shape mismatch")
    return ((p_rf + bu) / 2.0 > tau_rf).astype(np.uint8)


# ---------------------------------------------------------------------------
# acceptance-ratio curves


@dataclass(frozen=True)
class AcceptanceCurve:
    taus: np.ndarray
    ratios: np.ndarray


def acceptance_curve(sims, grid_size: int = 1000) -> AcceptanceCurve:
    """Proportion of instances whose similarity strictly exceeds each tau."""
    s = np.asarray(sims, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty similarity set")
    taus = np.linspace(0.0, 1.0, grid_size + 1)
    ratios = (s[None, :] > taus[:, None]).mean(axis=1)
    return AcceptanceCurve(taus, ratios)


def curve_auc(curve: AcceptanceCurve) -> float:
    """Numerically integrated area; equals the mean similarity up to grid error."""
    return float(np.trapezoid(curve.ratios, curve.taus))
