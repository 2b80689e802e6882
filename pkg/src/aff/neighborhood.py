"""Cluster-based neighbourhoods, expanded relative positions and Shepard interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment, TokenSet, _positions, centroids

EPS = 1e-9


@dataclass
class NeighborTable:
    indices: np.ndarray  # (N, M) token indices
    rel_pos: np.ndarray  # (N, M, 5) expanded p_query - p_neighbor
    R: int

    @property
    def M(self) -> int:
        return self.indices.shape[1]


def expand_rel(delta) -> np.ndarray:
    """(dx, dy) -> (dx, dy, d, dx/d, dy/d) along the last axis.

    The unit direction of a zero offset is (0, 0).
    """
    delta = np.asarray(delta, dtype=np.float64)
    dx, dy = delta[..., 0], delta[..., 1]
    d = np.hypot(dx, dy)
    safe = np.where(d > 0, d, 1.0)
    return np.stack([dx, dy, d, dx / safe, dy / safe], axis=-1)


def nearest_clusters(query, cluster_centroids: np.ndarray, R: int) -> np.ndarray:
    """Ids of the ``R`` clusters whose centroids are closest to ``query``.

    Ties go to the lower cluster id.
    """
    k = len(cluster_centroids)
    if R > k:
        raise ValueError(f"R={R} exceeds cluster count {k}")
    d = np.linalg.norm(cluster_centroids - np.asarray(query, dtype=np.float64), axis=1)
    return np.lexsort((np.arange(k), d))[:R]


def _cluster_neighbors(cents: np.ndarray, R: int) -> np.ndarray:
    """(k, R) neighbour cluster ids per cluster, own cluster first."""
    k = len(cents)
    d = np.sqrt(((cents[:, None, :] - cents[None, :, :]) ** 2).sum(-1))
    d[np.arange(k), np.arange(k)] = -1.0
    ids = np.broadcast_to(np.arange(k), (k, k))
    order = np.lexsort((ids, d), axis=1)
    return order[:, :R]


def build_neighbor_table(tokens, assignment: ClusterAssignment, R: int) -> NeighborTable:
    """Neighbour rows from the ``R`` clusters nearest to each token's own cluster.

    The query point is the centroid of the token's cluster, so every member of
    a cluster shares one row and always sees its own cluster first. Rows
    shorter than ``R * max_cluster_size`` repeat their last valid neighbour.
    """
    pos = _positions(tokens)
    k = assignment.cluster_count
    if R > k:
        raise ValueError(f"R={R} exceeds cluster count {k}")
    near = _cluster_neighbors(centroids(pos, assignment), R)
    width = R * int(assignment.cluster_sizes.max())
    rows = np.empty((k, width), dtype=np.int64)
    for c in range(k):
        members = np.concatenate([assignment.members(j) for j in near[c]])
        rows[c, :len(members)] = members
        rows[c, len(members):] = members[-1]
    indices = rows[assignment.cluster_of]
    rel = expand_rel(pos[:, None, :] - pos[indices])
    return NeighborTable(indices, rel, R)


def full_table(tokens) -> NeighborTable:
    """Every token neighbours every token (global attention)."""
    pos = _positions(tokens)
    n = len(pos)
    indices = np.broadcast_to(np.arange(n), (n, n)).copy()
    return NeighborTable(indices, expand_rel(pos[:, None, :] - pos[None, :, :]), 1)


def shepard_weights(query, source_positions: np.ndarray, k: int = 4, power: float = 6.0):
    """Nearest ``k`` source indices and their normalised inverse-distance weights."""
    src = np.asarray(source_positions, dtype=np.float64).reshape(-1, 2)
    if len(src) == 0:
        raise ValueError("no source tokens to interpolate from")
    k = min(k, len(src))
    d = np.linalg.norm(src - np.asarray(query, dtype=np.float64), axis=1)
    idx = np.lexsort((np.arange(len(src)), d))[:k]
    w = 1.0 / (d[idx] ** power + EPS)
    return idx, w / w.sum()


def shepard_interpolate(query, sources: TokenSet, k: int = 4, power: float = 6.0) -> np.ndarray:
    idx, w = shepard_weights(query, sources.positions, k, power)
    return w @ np.asarray(sources.features)[idx]
