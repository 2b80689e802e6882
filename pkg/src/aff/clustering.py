"""Balanced clustering of 2D token positions and the silhouette metric."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sfc

RATIO_EPS = 1e-9


@dataclass
class TokenSet:
    """Irregular tokens: positions in stage-1 lattice units plus features.

    ``features`` may be a numpy array or an autodiff ``Tensor``.
    """

    positions: np.ndarray
    features: object = None
    stage_index: int = 1

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(self.positions) < 1:
            raise ValueError("a token set needs at least one token")
        if self.features is not None and self.features.shape[0] != len(self.positions):
            raise ValueError(
                f"positions {self.positions.shape} and features {self.features.shape} disagree on N"
            )

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class ClusterAssignment:
    sorted_order: np.ndarray
    cluster_of: np.ndarray
    cluster_count: int
    cluster_sizes: np.ndarray
    starts: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.starts is None:
            self.starts = np.concatenate([[0], np.cumsum(self.cluster_sizes)])

    def members(self, cluster: int) -> np.ndarray:
        return self.sorted_order[self.starts[cluster]:self.starts[cluster + 1]]


def ratio_key(p, a_prev, a_next):
    """Distance to the previous anchor over distance to the next one."""
    p, a_prev, a_next = (np.asarray(v, dtype=np.float64) for v in (p, a_prev, a_next))
    d_prev = np.linalg.norm(p - a_prev, axis=-1)
    d_next = np.linalg.norm(p - a_next, axis=-1)
    return d_prev / (d_next + RATIO_EPS)


def cluster_count_for(n: int, cluster_size: int) -> int:
    if cluster_size < 1:
        raise ValueError(f"cluster_size must be >= 1, got {cluster_size}")
    return max(1, int(math.floor(n / cluster_size + 0.5)))


def partition(sorted_order: np.ndarray, k: int) -> ClusterAssignment:
    """Cut a sorted token array into ``k`` contiguous groups, larger ones first."""
    n = len(sorted_order)
    base, extra = divmod(n, k)
    sizes = np.full(k, base, dtype=np.int64)
    sizes[:extra] += 1
    cluster_of = np.empty(n, dtype=np.int64)
    cluster_of[sorted_order] = np.repeat(np.arange(k), sizes)
    return ClusterAssignment(sorted_order, cluster_of, k, sizes)


def _positions(tokens) -> np.ndarray:
    if isinstance(tokens, TokenSet):
        return tokens.positions
    return np.asarray(tokens, dtype=np.float64).reshape(-1, 2)


def balanced_cluster(tokens, cluster_size: int, curve: str = "scanline") -> ClusterAssignment:
    """Anchor-ordered balanced clustering.

    Tokens are quantized to a coarse anchor grid ordered by ``curve``;
    inside one anchor cell they are ordered by ``ratio_key`` against the
    neighbouring anchors on the curve, ties going to the lower token index.
    Only positions are read.
    """
    pos = _positions(tokens)
    n = len(pos)
    k = cluster_count_for(n, cluster_size)
    grid = sfc.build_anchor_grid(sfc.bbox_of(pos), k)
    ordering = sfc.order_cells(grid, curve)
    anchors = grid.anchors[ordering.order]
    r, c = sfc.quantize_cells(pos, grid)
    anchor_rank = ordering.rank[r * grid.cols + c]
    last = grid.size - 1
    a_prev = anchors[np.maximum(anchor_rank - 1, 0)]
    a_next = anchors[np.minimum(anchor_rank + 1, last)]
    key = ratio_key(pos, a_prev, a_next)
    order = np.lexsort((np.arange(n), key, anchor_rank))
    return partition(order, k)


def no_anchor_cluster(tokens, cluster_size: int, curve: str = "scanline") -> ClusterAssignment:
    """Ablation variant: rank tokens directly on a unit-cell curve."""
    pos = _positions(tokens)
    n = len(pos)
    k = cluster_count_for(n, cluster_size)
    x0, y0, x1, y1 = sfc.bbox_of(pos)
    cols = max(1, int(math.ceil(x1 - x0 - 1e-9)))
    rows = max(1, int(math.ceil(y1 - y0 - 1e-9)))
    grid = sfc.AnchorGrid(rows, cols, 1.0, 1.0, (x0, y0))
    r, c = sfc.quantize_cells(pos, grid)
    rank = sfc.curve_rank(curve, r, c, rows, cols)
    order = np.lexsort((np.arange(n), rank))
    return partition(order, k)


def centroids(tokens, assignment: ClusterAssignment) -> np.ndarray:
    pos = _positions(tokens)
    sums = np.zeros((assignment.cluster_count, 2))
    np.add.at(sums, assignment.cluster_of, pos)
    return sums / assignment.cluster_sizes[:, None]


def silhouette(tokens, assignment: ClusterAssignment) -> float:
    """Mean silhouette coefficient over all tokens.

    Tokens in singleton clusters score 0. Memory is O(N * k).
    """
    k = assignment.cluster_count
    if k < 2:
        raise ValueError("silhouette undefined for fewer than 2 clusters")
    pos = _positions(tokens)
    n = len(pos)
    labels = assignment.cluster_of
    sizes = assignment.cluster_sizes.astype(np.float64)
    # per-token sum of distances to every cluster, built in row blocks
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    dist_sums = np.empty((n, k))
    block = max(1, 4_000_000 // n)
    for start in range(0, n, block):
        chunk = pos[start:start + block]
        d = np.sqrt(((chunk[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
        dist_sums[start:start + block] = d @ onehot
    own = labels
    own_size = sizes[own]
    rows = np.arange(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = dist_sums[rows, own] / (own_size - 1)
        means = dist_sums / sizes[None, :]
    means[rows, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own_size == 1] = 0.0
    return float(s.mean())
