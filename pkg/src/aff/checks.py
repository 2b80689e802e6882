"""Finite-difference gradient suite: every differentiable op plus the composed losses.

Everything runs at float64. Each case builds a fresh scalar loss from seeded
random inputs and returns the per-parameter ``GradReport`` list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import init_block, transformer_block
from .clustering import balanced_cluster
from .downsample import init_downsample, merge_neighborhoods, importance_scores
from .model import ModelConfig, aff_nano, forward, init_params
from .neighborhood import build_neighbor_table

TOLERANCE = 1e-4


@dataclass
class CaseResult:
    case: str
    reports: list

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.reports), default=0.0)

    def ok(self, tol: float = TOLERANCE) -> bool:
        return self.max_rel_err < tol and all(np.isfinite(r.max_rel_err) for r in self.reports)


def _leaf(rng, shape, name):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def _op_cases(rng):
    """``name -> (loss builder, leaves)`` for each core op."""
    cases = {}

    def case(name, build, *leaves):
        # non-scalar outputs are reduced as sum(out * R), R fixed and random,
        # so no op is only checked through a uniform upstream gradient
        out = build()
        r = None if out.data.size == 1 else ad.constant(rng.standard_normal(out.shape))
        cases[name] = ((lambda: build()) if r is None
                       else (lambda: ad.sum_all(ad.mul(build(), r))), leaves)

    a, b = _leaf(rng, (3, 4), "a"), _leaf(rng, (4, 2), "b")
    case("matmul", lambda: ad.matmul(a, b), a, b)
    x, y, bias = _leaf(rng, (3, 4), "x"), _leaf(rng, (3, 4), "y"), _leaf(rng, (4,), "bias")
    case("add", lambda: ad.add(ad.add(x, y), bias), x, y, bias)
    case("sub", lambda: ad.sub(x, y), x, y)
    case("mul", lambda: ad.mul(ad.mul(x, y), bias), x, y, bias)
    case("scale", lambda: ad.scale(x, -1.7), x)
    case("sigmoid", lambda: ad.sigmoid(x), x)
    case("gelu", lambda: ad.gelu(x), x)
    case("softmax", lambda: ad.softmax(x), x)
    case("log_softmax", lambda: ad.log_softmax(x), x)
    gain, off = _leaf(rng, (4,), "gain"), _leaf(rng, (4,), "offset")
    case("layer_norm", lambda: ad.layer_norm(x, gain, off), x, gain, off)
    rows = _leaf(rng, (5, 3), "rows")
    idx = np.array([[0, 4, 4], [2, 1, 0]])
    case("gather_rows", lambda: ad.gather_rows(rows, idx), rows)
    seg = np.array([2, 0, 2, 1, 0])
    case("segment_sum", lambda: ad.segment_sum(rows, seg, 3), rows)
    case("reshape", lambda: ad.reshape(x, (2, 6)), x)
    z = _leaf(rng, (2, 4), "z")
    case("concat", lambda: ad.concat([x, z], axis=0), x, z)
    case("getitem", lambda: ad.getitem(x, (slice(0, 2), np.array([3, 1, 1]))), x)
    t3, w2 = _leaf(rng, (2, 3, 4), "t3"), _leaf(rng, (4, 5), "w2")
    case("einsum", lambda: ad.einsum("bij,jk->bki", t3, w2), t3, w2)
    labels = np.array([0, 3, 2])
    case("cross_entropy", lambda: ad.cross_entropy(x, labels), x)
    return cases


def op_gradchecks(seed: int = 0, samples: int = 32) -> list[CaseResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, (f, leaves) in _op_cases(rng).items():
        out.append(CaseResult(name, ad.grad_check(f, [(p.name, p) for p in leaves],
                                                  samples=samples, seed=seed)))
    return out


def _grid_tokens(rng, n_side: int, jitter: float = 0.0):
    ys, xs = np.divmod(np.arange(n_side * n_side), n_side)
    pos = np.stack([xs, ys], axis=1).astype(np.float64)
    return pos + jitter * rng.standard_normal(pos.shape)


def _randomise(store, rng, std=0.3):
    # default inits leave zeros (biases, score layer) where gradients are degenerate
    for _, p in store:
        p.data = p.data + std * rng.standard_normal(p.shape)


def attention_block_gradcheck(seed: int = 0, samples: int = 32) -> CaseResult:
    rng = np.random.default_rng(seed)
    pos = _grid_tokens(rng, 4, jitter=0.2)
    dim, heads = 8, 2
    store = ad.ParameterStore(seed=seed)
    init_block(store, "blk", dim, heads, 2.0)
    _randomise(store, rng)
    feats = store.add("input", (len(pos), dim), init="normal", std=1.0)
    table = build_neighbor_table(pos, balanced_cluster(pos, 4), 2)
    r = ad.constant(rng.standard_normal((len(pos), dim)))
    f = lambda: ad.sum_all(ad.mul(transformer_block(feats, table, store, "blk", heads), r))  # noqa: E731
    return CaseResult("attention_block", ad.grad_check(f, store, samples=samples, seed=seed))


def merge_gradcheck(seed: int = 0, samples: int = 32) -> CaseResult:
    """Merge loss with respect to the score layer, weight net, U and the input features."""
    rng = np.random.default_rng(seed)
    pos = _grid_tokens(rng, 6)
    dim, dim_out = 6, 8
    store = ad.ParameterStore(seed=seed)
    init_downsample(store, "down", dim, dim_out)
    _randomise(store, rng)
    feats = store.add("input", (len(pos), dim), init="normal", std=1.0)
    table = build_neighbor_table(pos, balanced_cluster(pos, 4), 3)
    centers = np.arange(0, len(pos), 4)
    r = ad.constant(rng.standard_normal((len(centers), dim_out)))

    def f():
        s = importance_scores(feats, store, "down")
        return ad.sum_all(ad.mul(merge_neighborhoods(centers, pos, feats, table, s, store, "down"), r))

    return CaseResult("merge", ad.grad_check(f, store, samples=samples, seed=seed))


def model_gradcheck(seed: int = 0, samples: int = 8, config: ModelConfig | None = None,
                    image_size: int = 16) -> CaseResult:
    """Cross-entropy of the four-stage classifier (AFF-Nano by default) on two random images."""
    rng = np.random.default_rng(seed)
    config = config or aff_nano()
    store = init_params(config, seed=seed, dtype=np.float64)
    # At the default init a one-token stage feeds an all-zero vector into the next
    # LayerNorm, where the loss bends on a scale of sqrt(eps) and central
    # differences at h=1e-5 are unreliable; jitter every parameter off that point.
    _randomise(store, rng, std=0.1)
    # spread the scores so no selection decision sits within a finite-difference step
    for name, p in store:
        if name.endswith("score.weight"):
            p.data = rng.normal(0.0, 1.0 / np.sqrt(p.shape[0]), p.shape)
    images = rng.uniform(0.0, 1.0, size=(2, image_size, image_size, config.in_channels))
    labels = np.array([0, 1]) % config.num_classes
    f = lambda: ad.cross_entropy(forward(images, store, config), labels)  # noqa: E731
    return CaseResult("classify", ad.grad_check(f, store, samples=samples, seed=seed))


def full_suite(seed: int = 0) -> list[CaseResult]:
    return op_gradchecks(seed) + [attention_block_gradcheck(seed), merge_gradcheck(seed),
                                  model_gradcheck(seed)]
