import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aff import autodiff as ad
from aff.attention import (global_attention_block, init_attention, init_block, local_attention,
                           position_bias, transformer_block)
from aff.clustering import balanced_cluster
from aff.neighborhood import NeighborTable, build_neighbor_table, expand_rel, full_table
import oracles


def make_store(dim, heads, seed=0, std=0.3, block=False):
    store = ad.ParameterStore(seed=seed)
    if block:
        init_block(store, "b", dim, heads, 2.0)
    else:
        init_attention(store, "a", dim, heads)
    rng = np.random.default_rng(seed + 1)
    for _, p in store:
        p.data = p.data + rng.normal(0, std, p.shape)
    return store


def as_oracle_params(store, prefix):
    p = {}
    for proj in ("q", "k", "v", "o", "pos"):
        p[f"{proj}.w"] = store[f"{prefix}.{proj}.weight"].data
        p[f"{proj}.b"] = store[f"{prefix}.{proj}.bias"].data
    p["blank_k"] = store[f"{prefix}.blank_k"].data
    p["blank_v"] = store[f"{prefix}.blank_v"].data
    return p


def instance(n, cs, r, seed, dim=8):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 10, (n, 2))
    table = build_neighbor_table(pos, balanced_cluster(pos, cs), r)
    return pos, table, rng.normal(size=(n, dim))


# -- position bias --------------------------------------------------------------------


def test_position_bias_zero_weights_gives_bias():
    store = ad.ParameterStore()
    store.add("p.weight", (5, 3), init="zeros")
    b = store.add("p.bias", (3,))
    b.data = np.array([1.0, -2.0, 0.5])
    out = position_bias(np.random.default_rng(0).normal(size=(4, 6, 5)), store, "p").data
    np.testing.assert_array_equal(out, np.broadcast_to(b.data, (4, 6, 3)))


def test_position_bias_rows_and_dense_reference(rng):
    store = make_store(8, 2)
    rel = rng.normal(size=(3, 4, 5))
    rel[1, 2] = rel[0, 0]
    out = position_bias(rel, store, "a.pos").data
    np.testing.assert_array_equal(out[1, 2], out[0, 0])
    w, b = store["a.pos.weight"].data, store["a.pos.bias"].data
    ref = np.array([[[sum(rel[i, j, t] * w[t, h] for t in range(5)) + b[h] for h in range(2)]
                     for j in range(4)] for i in range(3)])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


# -- local attention -------------------------------------------------------------------


def test_uniform_when_keys_equal_and_no_bias():
    n, dim = 6, 4
    store = make_store(dim, 1)
    for name in ("a.k.weight", "a.pos.weight", "a.pos.bias"):
        store[name].data[:] = 0
    store["a.blank_k"].data[:] = store["a.k.bias"].data
    pos = np.random.default_rng(2).uniform(0, 5, (n, 2))
    _, attn = local_attention(ad.constant(np.random.default_rng(3).normal(size=(n, dim))),
                              full_table(pos), store, "a", 1, return_attn=True)
    np.testing.assert_allclose(attn.data, 1 / (n + 1), rtol=1e-12)


def test_large_blank_key_returns_blank_value():
    n, dim = 5, 4
    store = make_store(dim, 1)
    store["a.q.weight"].data[:] = 0
    store["a.q.bias"].data[:] = 1.0
    store["a.k.weight"].data[:] = 0
    store["a.k.bias"].data[:] = 0
    store["a.pos.weight"].data[:] = 0
    store["a.pos.bias"].data[:] = 0
    store["a.blank_k"].data[:] = 200.0
    pos = np.arange(10, dtype=float).reshape(5, 2)
    x = ad.constant(np.random.default_rng(0).normal(size=(n, dim)))
    out = local_attention(x, full_table(pos), store, "a", 1).data
    expected = store["a.blank_v"].data @ store["a.o.weight"].data + store["a.o.bias"].data
    np.testing.assert_allclose(out, np.broadcast_to(expected, out.shape), atol=1e-12)


@pytest.mark.parametrize("n,cs,r,heads", [(5, 5, 1, 1), (5, 2, 2, 1), (12, 3, 2, 2), (20, 4, 3, 4)])
def test_matches_loop_reference(n, cs, r, heads):
    pos, table, x = instance(n, cs, r, seed=n)
    store = make_store(8, heads, seed=n)
    got = local_attention(ad.constant(x), table, store, "a", heads).data
    ref = oracles.attention(x, pos, table.indices, as_oracle_params(store, "a"), heads)
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)


def test_global_block_matches_dense_reference():
    pos, _, x = instance(8, 8, 1, seed=5)
    store = make_store(8, 2, block=True)
    got = global_attention_block(ad.constant(x), pos, store, "b", 2).data
    h = np.array([oracles.layer_norm_vec(list(r), store["b.norm1.gain"].data,
                                         store["b.norm1.offset"].data) for r in x])
    x1 = x + oracles.attention(h, pos, [list(range(8))] * 8, as_oracle_params(store, "b.attn"), 2)
    h = np.array([oracles.layer_norm_vec(list(r), store["b.norm2.gain"].data,
                                         store["b.norm2.offset"].data) for r in x1])
    hid = np.vectorize(oracles.gelu)(h @ store["b.mlp.fc1.weight"].data + store["b.mlp.fc1.bias"].data)
    ref = x1 + hid @ store["b.mlp.fc2.weight"].data + store["b.mlp.fc2.bias"].data
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)


def test_global_equals_local_when_r_covers_all():
    pos, _, x = instance(12, 3, 1, seed=9)
    store = make_store(8, 2, block=True)
    table = build_neighbor_table(pos, balanced_cluster(pos, 3), 4)
    local = transformer_block(ad.constant(x), table, store, "b", 2).data
    glob = global_attention_block(ad.constant(x), pos, store, "b", 2).data
    np.testing.assert_allclose(local, glob, rtol=1e-12, atol=1e-12)


def test_single_token_global():
    store = make_store(4, 2)
    pos = np.array([[3.0, 1.0]])
    _, attn = local_attention(ad.constant(np.ones((1, 4))), full_table(pos), store, "a", 2,
                              return_attn=True)
    assert attn.shape == (1, 2, 2)
    np.testing.assert_allclose(attn.data.sum(-1), 1.0)


def test_zero_output_projections_make_block_identity(rng):
    pos, table, x = instance(15, 4, 2, seed=4)
    store = make_store(8, 2, block=True)
    for name in ("b.attn.o.weight", "b.attn.o.bias", "b.mlp.fc2.weight", "b.mlp.fc2.bias"):
        store[name].data[:] = 0
    np.testing.assert_array_equal(transformer_block(ad.constant(x), table, store, "b", 2).data, x)


def test_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="divide"):
        init_attention(ad.ParameterStore(), "a", 6, 4)


def test_non_finite_logits_raise():
    store = make_store(4, 1)
    store["a.pos.bias"].data[:] = np.inf
    with pytest.raises(FloatingPointError):
        local_attention(ad.constant(np.ones((2, 4))), full_table(np.eye(2)), store, "a", 1)


# -- properties ---------------------------------------------------------------------------


@given(st.integers(2, 40), st.integers(1, 6), st.integers(1, 3), st.sampled_from([1, 2, 4]),
       st.integers(0, 2**31 - 1))
def test_attention_rows_sum_to_one(n, cs, r, heads, seed):
    pos, table, x = instance(n, cs, min(r, max(1, round(n / cs))), seed)
    store = make_store(8, heads, seed=seed % 1000)
    _, attn = local_attention(ad.constant(x), table, store, "a", heads, return_attn=True)
    assert attn.shape == (n, heads, table.M + 1)
    np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-6)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.integers(0, 2**31 - 1))
def test_translation_invariance(tx, ty, seed):
    pos, table, x = instance(16, 4, 2, seed)
    store = make_store(8, 2, block=True, seed=seed % 1000)
    moved = pos + [tx, ty]
    t2 = build_neighbor_table(moved, balanced_cluster(moved, 4), 2)
    np.testing.assert_array_equal(t2.indices, table.indices)
    a = transformer_block(ad.constant(x), table, store, "b", 2).data
    b = transformer_block(ad.constant(x), t2, store, "b", 2).data
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    pos, table, x = instance(18, 4, 2, seed)
    store = make_store(8, 2, block=True, seed=seed % 1000)
    perm = np.random.default_rng(seed).permutation(18)
    inv = np.argsort(perm)
    t2 = NeighborTable(inv[table.indices[perm]], table.rel_pos[perm], table.R)
    a = transformer_block(ad.constant(x), table, store, "b", 2).data
    b = transformer_block(ad.constant(x[perm]), t2, store, "b", 2).data
    np.testing.assert_allclose(b, a[perm], rtol=1e-12, atol=1e-12)


@given(st.floats(0.01, 100), st.floats(0, 2 * math.pi), st.integers(0, 2**31 - 1))
def test_rel_pos_component_invariances(k, theta, seed):
    pos, table, _ = instance(16, 4, 2, seed)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    delta = pos[:, None] - pos[table.indices]
    base = table.rel_pos
    scaled = expand_rel(k * delta)
    rotated = expand_rel(delta @ rot.T)
    np.testing.assert_allclose(scaled[..., 3:], base[..., 3:], atol=1e-9)
    np.testing.assert_allclose(rotated[..., 2], base[..., 2], atol=1e-9)
