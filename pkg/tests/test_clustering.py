import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import silhouette_score

from aff.clustering import (TokenSet, balanced_cluster, centroids, cluster_count_for,
                            no_anchor_cluster, ratio_key, silhouette)
from conftest import unit_grid
import oracles

CURVE = st.sampled_from(["scanline", "peano", "hilbert"])


def check_balanced(a, n):
    assert a.cluster_sizes.max() - a.cluster_sizes.min() <= 1
    assert a.cluster_sizes.sum() == n
    np.testing.assert_array_equal(np.sort(a.sorted_order), np.arange(n))
    np.testing.assert_array_equal(np.bincount(a.cluster_of, minlength=a.cluster_count),
                                  a.cluster_sizes)


def test_ratio_key_examples():
    assert ratio_key((1, 1), (1, 1), (4, 5)) == 0.0
    assert ratio_key((0, 0), (-2, 0), (2, 0)) == pytest.approx(1.0, abs=1e-9)
    assert ratio_key((0, 0), (3, 4), (6, 8)) == pytest.approx(0.5, rel=1e-9)


def test_cluster_count_rounds_half_up():
    assert cluster_count_for(10, 4) == 3
    assert cluster_count_for(2, 4) == 1
    assert cluster_count_for(1, 8) == 1
    assert cluster_count_for(3136, 8) == 392
    with pytest.raises(ValueError):
        cluster_count_for(10, 0)


def test_single_cluster():
    a = balanced_cluster(unit_grid(2), 4)
    assert a.cluster_count == 1 and list(a.cluster_sizes) == [4]


def test_dense_grid_all_eights():
    a = balanced_cluster(unit_grid(56), 8)
    assert a.cluster_count == 392
    assert (a.cluster_sizes == 8).all()


def test_ten_tokens_sizes():
    a = balanced_cluster(np.random.default_rng(0).uniform(0, 5, (10, 2)), 4)
    assert sorted(a.cluster_sizes) == [3, 3, 4]
    assert a.cluster_sizes[0] == 4


def test_no_anchor_single_token():
    a = no_anchor_cluster([[3.0, 7.0]], 8)
    assert a.cluster_count == 1 and list(a.cluster_of) == [0]


def test_no_anchor_2x2_scanline():
    pos = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    a = no_anchor_cluster(pos, 2, "scanline")
    groups = {frozenset(map(tuple, pos[a.members(c)])) for c in range(2)}
    assert groups == {frozenset({(0, 0), (1, 0)}), frozenset({(1, 1), (0, 1)})}


def test_anchored_beats_no_anchor_scanline():
    pos = unit_grid(56)
    s_anchor = silhouette(pos, balanced_cluster(pos, 8, "scanline"))
    s_plain = silhouette(pos, no_anchor_cluster(pos, 8, "scanline"))
    assert s_anchor >= 0.15
    assert s_anchor > s_plain


def test_tokenset_input_and_validation():
    ts = TokenSet(unit_grid(4), np.zeros((16, 3)))
    assert len(balanced_cluster(ts, 4).cluster_of) == 16
    with pytest.raises(ValueError, match="disagree"):
        TokenSet(unit_grid(4), np.zeros((15, 3)))
    with pytest.raises(ValueError):
        TokenSet(np.zeros((0, 2)))


def test_deterministic():
    pos = np.random.default_rng(3).uniform(0, 40, (500, 2))
    a, b = balanced_cluster(pos, 8, "hilbert"), balanced_cluster(pos, 8, "hilbert")
    np.testing.assert_array_equal(a.cluster_of, b.cluster_of)


@given(st.integers(1, 400), st.integers(1, 20), CURVE, st.integers(0, 2**31 - 1),
       st.booleans())
def test_balance_and_coverage(n, cs, curve, seed, anchors):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-50, 50, (n, 2)) * rng.uniform(0.01, 1, 2)
    fn = balanced_cluster if anchors else no_anchor_cluster
    a = fn(pos, cs, curve)
    assert a.cluster_count == cluster_count_for(n, cs)
    check_balanced(a, n)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 9), CURVE)
def test_balance_on_lattices_with_duplicates(w, h, cs, curve):
    pos = np.concatenate([unit_grid(w, h), unit_grid(w, h)[::3]])
    check_balanced(balanced_cluster(pos, cs, curve), len(pos))


# -- centroids and silhouette --------------------------------------------------------


def test_centroid_examples():
    pos = np.array([[0, 0], [2, 0], [5, 5]], float)
    a = balanced_cluster(pos[:2], 2)
    np.testing.assert_allclose(centroids(pos[:2], a), [[1.0, 0.0]])
    a = no_anchor_cluster(pos[2:], 1)
    np.testing.assert_allclose(centroids(pos[2:], a), [[5.0, 5.0]])


def test_centroids_match_brute_force(rng):
    pos = rng.uniform(0, 20, (100, 2))
    a = balanced_cluster(pos, 7)
    got = centroids(pos, a)
    for c in range(a.cluster_count):
        np.testing.assert_allclose(got[c], pos[a.cluster_of == c].mean(axis=0), rtol=1e-12)


def test_silhouette_two_far_clusters():
    pos = np.array([[0, 0], [0, 1], [1, 0], [1, 1], [100, 100], [100, 101], [101, 100], [101, 101]],
                   float)
    a = no_anchor_cluster(pos, 4)
    labels = a.cluster_of
    assert len(set(labels[:4])) == 1 and len(set(labels[4:])) == 1
    s = silhouette(pos, a)
    assert s > 0.9
    assert s == pytest.approx(oracles.silhouette(pos.tolist(), labels.tolist()), rel=1e-12)


def test_silhouette_coincident_points_is_zero():
    pos = np.zeros((6, 2))
    assert silhouette(pos, balanced_cluster(pos, 3)) == 0.0


def test_silhouette_needs_two_clusters():
    with pytest.raises(ValueError, match="silhouette undefined"):
        silhouette(unit_grid(2), balanced_cluster(unit_grid(2), 4))


@given(st.integers(4, 80), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_silhouette_matches_loop_oracle(n, cs, seed):
    pos = np.random.default_rng(seed).uniform(0, 10, (n, 2))
    a = balanced_cluster(pos, cs)
    if a.cluster_count < 2:
        return
    got = silhouette(pos, a)
    assert -1.0 <= got <= 1.0
    assert got == pytest.approx(oracles.silhouette(pos.tolist(), a.cluster_of.tolist()), abs=1e-12)


def test_silhouette_matches_sklearn(rng):
    pos = rng.uniform(0, 30, (700, 2))
    a = balanced_cluster(pos, 8, "peano")
    assert silhouette(pos, a) == pytest.approx(silhouette_score(pos, a.cluster_of), abs=1e-10)
