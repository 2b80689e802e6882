"""Adaptive downsampling: importance scores, adaptive grid prior, centre selection and
score-modulated neighbourhood merging."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .layers import init_linear, init_norm, linear, norm
from .neighborhood import NeighborTable, expand_rel

C_MID = 4


@dataclass
class GridPrior:
    stride: np.ndarray
    g: np.ndarray
    reserved: np.ndarray


def init_downsample(store, prefix: str, dim_in: int, dim_out: int, c_mid: int = C_MID):
    # zero score layer: every token starts at s = 0.5
    store.add(f"{prefix}.score.weight", (dim_in, 1), init="zeros")
    store.add(f"{prefix}.score.bias", (1,), init="zeros")
    init_linear(store, f"{prefix}.wnet.fc", 5, c_mid)
    init_norm(store, f"{prefix}.wnet.norm", c_mid)
    store.add(f"{prefix}.U.weight", (c_mid * dim_in, dim_out), init="fan_in")


def importance_scores(features, store, prefix: str):
    """``sigmoid(l(f))`` per token, shape ``(N,)``."""
    s = ad.sigmoid(linear(features, store, f"{prefix}.score"))
    return ad.reshape(s, (features.shape[0],))


def local_stride(positions) -> np.ndarray:
    """Nearest-neighbour L1 distance per token rounded up to a power of two."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    if n < 2:
        raise ValueError("local stride needs at least 2 tokens")
    dist, _ = cKDTree(pos).query(pos, k=2, p=1)
    nearest = dist[:, 1]
    if (nearest == 0).any():
        raise ValueError("duplicate token positions")
    return 2.0 ** np.ceil(np.log2(nearest))


def _on_lattice(v, step):
    return np.mod(v, step) == 0


def grid_prior(positions, stage_index: int) -> GridPrior:
    """Grid prior ``g`` and reserved flags for the ``stage_index``-th downsampling.

    A lone token gets stride 1; it is the only candidate anyway.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if not np.array_equal(pos, np.round(pos)):
        raise ValueError("grid prior needs integer token coordinates")
    if stage_index < 1:
        raise ValueError(f"stage index starts at 1, got {stage_index}")
    t = local_stride(pos) if len(pos) > 1 else np.ones(1)
    x, y = pos[:, 0], pos[:, 1]
    g = (_on_lattice(x, 2 * t) & _on_lattice(y, 2 * t)).astype(np.float64)
    coarse = 2.0 ** (stage_index + 1)
    reserved = _on_lattice(x, coarse) & _on_lattice(y, coarse)
    return GridPrior(t, g, reserved)


def keep_count(n: int, keep_fraction: float) -> int:
    return max(1, int(math.floor(keep_fraction * n + 0.5)))


def select_centers(prior: GridPrior, s, alpha: float, keep_fraction: float) -> np.ndarray:
    """Indices (ascending) of the top tokens by ``g + alpha * s``; reserved tokens first.

    When there are more reserved tokens than the quota, all of them are kept.
    """
    s = np.asarray(s, dtype=np.float64)
    n = len(s)
    if len(prior.g) != n:
        raise ValueError(f"prior for {len(prior.g)} tokens, scores for {n}")
    m = max(keep_count(n, keep_fraction), int(prior.reserved.sum()))
    score = prior.g + alpha * s
    order = np.lexsort((np.arange(n), -score, ~prior.reserved))
    return np.sort(order[:m])


def merge_neighborhoods(centers, positions, features, table: NeighborTable, s, store, prefix: str):
    """Score-modulated PointConv merge around each centre.

    For centre ``c``: ``vec(sum_i s_i * W(p_i - p_c) f_i^T) @ U`` where ``W`` is a
    fully connected layer, LayerNorm and GELU on the expanded relative position.
    Returns ``(m, C')`` merged features.
    """
    centers = np.asarray(centers, dtype=np.int64)
    nbr = table.indices[centers]
    m, k = nbr.shape
    c = features.shape[1]
    rel = expand_rel(positions[nbr] - positions[centers][:, None, :]).astype(features.dtype)
    w = linear(ad.constant(rel), store, f"{prefix}.wnet.fc")
    w = ad.gelu(norm(w, store, f"{prefix}.wnet.norm"))
    s_nbr = ad.gather_rows(s, nbr)
    f_nbr = ad.gather_rows(features, nbr)
    agg = ad.einsum("cm,cmk,cmd->ckd", s_nbr, w, f_nbr)
    c_mid = w.shape[-1]
    return ad.matmul(ad.reshape(agg, (m, c_mid * c)), store[f"{prefix}.U.weight"])


@dataclass
class DownsampleResult:
    centers: np.ndarray
    positions: np.ndarray
    features: object
    prior: GridPrior
    scores: np.ndarray


def downsample(positions, features, table: NeighborTable, store, prefix: str,
               stage_index: int, alpha: float, keep_fraction: float) -> DownsampleResult:
    """Scores, grid prior, centre selection and merging for one token set."""
    positions = np.asarray(positions, dtype=np.float64)
    s = importance_scores(features, store, prefix)
    prior = grid_prior(positions, stage_index)
    centers = select_centers(prior, s.data, alpha, keep_fraction)
    merged = merge_neighborhoods(centers, positions, features, table, s, store, prefix)
    return DownsampleResult(centers, positions[centers], merged, prior, s.data.copy())


def downsample_batch_select(positions: list, s: np.ndarray, stage_index: int, alpha: float,
                            keep_fraction: float, record=None):
    """Per-image centre selection over a flat score array.

    Returns global centre indices and the per-image positions that survive.
    ``record``, when given, collects g, s, reserved and selected per image.
    """
    centers, kept, offset = [], [], 0
    for pos in positions:
        n = len(pos)
        s_img = s[offset:offset + n]
        prior = grid_prior(pos, stage_index)
        sel = select_centers(prior, s_img, alpha, keep_fraction)
        centers.append(sel + offset)
        kept.append(pos[sel])
        if record is not None:
            mask = np.zeros(n, dtype=bool)
            mask[sel] = True
            record.g.append(prior.g)
            record.s.append(np.asarray(s_img, dtype=np.float64).copy())
            record.reserved.append(prior.reserved)
            record.selected.append(mask)
        offset += n
    return np.concatenate(centers), kept
