"""Local attention over irregular tokens with a learned position bias and a blank slot."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .layers import init_linear, init_norm, linear, norm
from .neighborhood import NeighborTable, full_table


def init_attention(store, prefix: str, dim: int, heads: int):
    if dim % heads:
        raise ValueError(f"head count {heads} does not divide channel count {dim}")
    for proj in ("q", "k", "v", "o"):
        init_linear(store, f"{prefix}.{proj}", dim, dim)
    init_linear(store, f"{prefix}.pos", 5, heads)
    store.add(f"{prefix}.blank_k", (dim,))
    store.add(f"{prefix}.blank_v", (dim,))


def init_block(store, prefix: str, dim: int, heads: int, mlp_ratio: float):
    init_norm(store, f"{prefix}.norm1", dim)
    init_attention(store, f"{prefix}.attn", dim, heads)
    init_norm(store, f"{prefix}.norm2", dim)
    hidden = int(round(dim * mlp_ratio))
    init_linear(store, f"{prefix}.mlp.fc1", dim, hidden)
    init_linear(store, f"{prefix}.mlp.fc2", hidden, dim)


def position_bias(rel_pos, store, name: str):
    """One fully connected layer from the 5-vector relative position to one bias per head."""
    return linear(ad.as_tensor(rel_pos), store, name)


def local_attention(x, table: NeighborTable, store, prefix: str, heads: int, return_attn=False):
    """Multi-head attention of each token over its neighbour row plus the blank slot.

    ``x`` is ``(N, C)``; the returned attention, if requested, is ``(N, H, M + 1)``
    with the blank slot last.
    """
    n, c = x.shape
    h = heads
    d = c // h
    m = table.M
    inv = 1.0 / np.sqrt(d)
    q = ad.reshape(linear(x, store, f"{prefix}.q"), (n, h, d))
    k = ad.reshape(ad.gather_rows(linear(x, store, f"{prefix}.k"), table.indices), (n, m, h, d))
    v = ad.reshape(ad.gather_rows(linear(x, store, f"{prefix}.v"), table.indices), (n, m, h, d))
    bias = position_bias(table.rel_pos.astype(x.dtype, copy=False), store, f"{prefix}.pos")
    logits = ad.add(ad.scale(ad.einsum("nhd,nmhd->nhm", q, k), inv),
                    ad.einsum("nmh->nhm", bias))
    blank_k = ad.reshape(store[f"{prefix}.blank_k"], (h, d))
    blank_v = ad.reshape(store[f"{prefix}.blank_v"], (h, d))
    blank = ad.reshape(ad.scale(ad.einsum("nhd,hd->nh", q, blank_k), inv), (n, h, 1))
    logits = ad.concat([logits, blank], axis=2)
    if not np.isfinite(logits.data).all():
        raise FloatingPointError(f"non-finite attention logits in {prefix}")
    attn = ad.softmax(logits)
    out = ad.add(ad.einsum("nhm,nmhd->nhd", ad.getitem(attn, (slice(None), slice(None), slice(0, m))), v),
                 ad.einsum("nh,hd->nhd", ad.getitem(attn, (slice(None), slice(None), m)), blank_v))
    out = linear(ad.reshape(out, (n, c)), store, f"{prefix}.o")
    return (out, attn) if return_attn else out


def mlp(x, store, prefix):
    return linear(ad.gelu(linear(x, store, f"{prefix}.fc1")), store, f"{prefix}.fc2")


def transformer_block(x, table: NeighborTable, store, prefix: str, heads: int):
    """Pre-norm residual block: attention then MLP. Positions are untouched."""
    x = ad.add(x, local_attention(norm(x, store, f"{prefix}.norm1"), table, store,
                                  f"{prefix}.attn", heads))
    return ad.add(x, mlp(norm(x, store, f"{prefix}.norm2"), store, f"{prefix}.mlp"))


def global_attention_block(x, positions, store, prefix: str, heads: int):
    """``transformer_block`` where every token neighbours every other token."""
    return transformer_block(x, full_table(positions), store, prefix, heads)
