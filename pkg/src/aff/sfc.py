"""Space-filling anchor grids and curve orderings.

Three curve kinds are supported: a boustrophedon horizontal scanline,
the Peano curve and the Hilbert curve. Every curve is exposed as a
vectorised rank function ``(rows, cols) -> rank`` so the same code drives
both anchor orderings and the anchor-free variant that ranks tokens
directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

CURVES = ("scanline", "peano", "hilbert")


@dataclass(frozen=True)
class AnchorGrid:
    rows: int
    cols: int
    cell_width: float
    cell_height: float
    origin: tuple[float, float]

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def anchors(self) -> np.ndarray:
        """Anchor centres, shape ``(rows*cols, 2)``, row-major, as (x, y)."""
        r, c = np.divmod(np.arange(self.size), self.cols)
        x = self.origin[0] + (c + 0.5) * self.cell_width
        y = self.origin[1] + (r + 0.5) * self.cell_height
        return np.stack([x, y], axis=1)


@dataclass(frozen=True)
class AnchorOrdering:
    order: np.ndarray  # anchor indices in curve order
    kind: str

    @property
    def rank(self) -> np.ndarray:
        """Inverse permutation: position of each anchor along the curve."""
        rank = np.empty_like(self.order)
        rank[self.order] = np.arange(len(self.order))
        return rank

    def to_json(self) -> str:
        return json.dumps([int(i) for i in self.order])


def bbox_of(positions: np.ndarray) -> tuple[float, float, float, float]:
    """Extent of a token set, each token owning a unit cell around it."""
    positions = np.asarray(positions, dtype=np.float64)
    lo = positions.min(axis=0) - 0.5
    hi = positions.max(axis=0) + 0.5
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def build_anchor_grid(bbox, target_cluster_count: int) -> AnchorGrid:
    """Coarse grid with roughly ``target_cluster_count`` cells over ``bbox``.

    ``bbox`` is ``(x0, y0, x1, y1)``. The row count follows the aspect
    ratio, ``rows = round(sqrt(k * H / W))``, clamped to ``[1, k]`` so the
    cell count stays within ``[k, 2k)``.
    """
    x0, y0, x1, y1 = (float(v) for v in bbox)
    width, height = x1 - x0, y1 - y0
    if not (width > 0 and height > 0):
        raise ValueError("empty extent")
    k = int(target_cluster_count)
    if k < 1:
        raise ValueError(f"target_cluster_count must be >= 1, got {k}")
    rows = int(math.floor(math.sqrt(k * height / width) + 0.5))
    rows = min(max(rows, 1), k)
    cols = -(-k // rows)
    return AnchorGrid(rows, cols, width / cols, height / rows, (x0, y0))


def _cell_coordinate(u: np.ndarray, n: int) -> np.ndarray:
    # a point on an edge belongs to the lower cell; outside points clamp
    idx = np.ceil(u).astype(np.int64) - 1
    return np.clip(idx, 0, n - 1)


def quantize_cells(positions: np.ndarray, grid: AnchorGrid) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of the cell containing each position."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if np.isnan(positions).any():
        raise ValueError("cannot quantize NaN coordinates")
    u = (positions[:, 0] - grid.origin[0]) / grid.cell_width
    v = (positions[:, 1] - grid.origin[1]) / grid.cell_height
    return _cell_coordinate(v, grid.rows), _cell_coordinate(u, grid.cols)


def quantize(position, grid: AnchorGrid):
    """Row-major anchor index of the cell holding ``position``.

    Accepts a single ``(x, y)`` pair or an ``(N, 2)`` array.
    """
    arr = np.asarray(position, dtype=np.float64)
    r, c = quantize_cells(arr, grid)
    idx = r * grid.cols + c
    return int(idx[0]) if arr.ndim == 1 else idx


# -- rank functions -----------------------------------------------------------


def scanline_rank(r, c, rows: int, cols: int) -> np.ndarray:
    r = np.asarray(r, dtype=np.int64)
    c = np.asarray(c, dtype=np.int64)
    return r * cols + np.where(r % 2 == 0, c, cols - 1 - c)


def hilbert_rank(r, c, rows: int, cols: int) -> np.ndarray:
    """Hilbert index on the smallest power-of-two square holding the grid."""
    n = 1
    while n < max(rows, cols):
        n *= 2
    x = np.array(c, dtype=np.int64, copy=True)
    y = np.array(r, dtype=np.int64, copy=True)
    d = np.zeros_like(x)
    s = n // 2
    while s > 0:
        rx = (x & s) > 0
        ry = (y & s) > 0
        d += s * s * ((3 * rx) ^ ry)
        # rotate the quadrant so the sub-curve starts at its origin
        flip = ~ry & rx
        x = np.where(flip, n - 1 - x, x)
        y = np.where(flip, n - 1 - y, y)
        swap = ~ry
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        s //= 2
    return d


def peano_rank(r, c, rows: int, cols: int) -> np.ndarray:
    """Peano index on the smallest power-of-three square holding the grid.

    Blocks of a 3x3 level are visited column by column in serpentine order;
    a block is mirrored in x when its block row is odd and in y when its
    block column is odd.
    """
    n = 1
    while n < max(rows, cols):
        n *= 3
    x = np.array(c, dtype=np.int64, copy=True)
    y = np.array(r, dtype=np.int64, copy=True)
    d = np.zeros_like(x)
    s = n // 3
    while s > 0:
        bx, x = np.divmod(x, s)
        by, y = np.divmod(y, s)
        d = d * 9 + bx * 3 + np.where(bx % 2 == 0, by, 2 - by)
        x = np.where(by % 2 == 1, s - 1 - x, x)
        y = np.where(bx % 2 == 1, s - 1 - y, y)
        s //= 3
    return d


RANKERS = {"scanline": scanline_rank, "peano": peano_rank, "hilbert": hilbert_rank}


def curve_rank(kind: str, r, c, rows: int, cols: int) -> np.ndarray:
    try:
        ranker = RANKERS[kind]
    except KeyError:
        raise ValueError(f"unknown curve {kind!r}; expected one of {CURVES}") from None
    return ranker(r, c, rows, cols)


def order_cells(grid: AnchorGrid, kind: str) -> AnchorOrdering:
    r, c = np.divmod(np.arange(grid.size), grid.cols)
    order = np.argsort(curve_rank(kind, r, c, grid.rows, grid.cols), kind="stable")
    return AnchorOrdering(order, kind)


def order_scanline(grid: AnchorGrid) -> AnchorOrdering:
    return order_cells(grid, "scanline")


def order_hilbert(grid: AnchorGrid) -> AnchorOrdering:
    return order_cells(grid, "hilbert")


def order_peano(grid: AnchorGrid) -> AnchorOrdering:
    return order_cells(grid, "peano")
