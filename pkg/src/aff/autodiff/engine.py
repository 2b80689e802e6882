"""Reverse-mode differentiation over dense numpy arrays.

A ``Tensor`` wraps an array, the tensors it was computed from and a rule
mapping the output adjoint to adjoints of those parents. Only bias-style
broadcasting (a 1-D operand matching the last axis) is supported; every
other shape change has to be spelled out with ``reshape`` or ``einsum``.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.special import erf

_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    shape = property(lambda self: self.data.shape)
    dtype = property(lambda self: self.data.dtype)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without seed needs a scalar, got {self.shape}")
            seed = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(seed, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _result(data, parents, backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, requires_grad=True)
    return Tensor(data)


def _is_bias(a, b):
    return b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]


def _unbias(g, b):
    return g.reshape(-1, b.shape[0]).sum(axis=0)


def _scatter_rows(index, values, n):
    """Sum ``values`` rows into ``n`` buckets given by ``index`` (duplicates add)."""
    index = index.reshape(-1)
    rows = values.reshape(len(index), -1)
    op = sparse.csr_matrix(
        (np.ones(len(index), dtype=values.dtype), (index, np.arange(len(index)))),
        shape=(n, len(index)),
    )
    return np.asarray(op @ rows)


def _is_basic(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis for i in items)


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if _is_bias(a, b):
        return _result(a.data + b.data, (a, b), lambda g: (g, _unbias(g, b)))
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not compatible")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data - b.data, (a, b), lambda g: (g, -g))
    if _is_bias(a, b):
        return _result(a.data - b.data, (a, b), lambda g: (g, -_unbias(g, b)))
    raise ShapeError(f"sub: shapes {a.shape} and {b.shape} are not compatible")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    if _is_bias(a, b):
        return _result(a.data * b.data, (a, b),
                       lambda g: (g * b.data, _unbias(g * a.data, b)))
    raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are not compatible")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.dtype.type(c) if np.issubdtype(a.dtype, np.floating) else c
    return _result(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    y = (x * cdf).astype(x.dtype, copy=False)

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),)

    return _result(y, (a,), back)


# -- linear algebra -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def einsum(subscripts: str, *operands) -> Tensor:
    """Explicit-output einsum (``"ij,jk->ik"``); no repeated index within an operand."""
    ops = [as_tensor(o) for o in operands]
    if "->" not in subscripts:
        raise ValueError("einsum needs an explicit output, e.g. 'ij,jk->ik'")
    lhs, out = subscripts.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != len(ops):
        raise ValueError(f"einsum: {len(ins)} subscripts for {len(ops)} operands")
    sizes = {}
    for sub_, o in zip(ins, ops):
        if len(sub_) != o.ndim or len(set(sub_)) != len(sub_):
            raise ShapeError(f"einsum: subscript {sub_!r} does not fit shape {o.shape}")
        for ch, n in zip(sub_, o.shape):
            if sizes.setdefault(ch, n) != n:
                raise ShapeError(
                    f"einsum: index {ch!r} has sizes {sizes[ch]} and {n} "
                    f"(shapes {[x.shape for x in ops]})"
                )
    data = np.einsum(subscripts, *[o.data for o in ops], optimize=len(ops) > 2)

    def back(g):
        grads = []
        for i, (sub_, o) in enumerate(zip(ins, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [ins[j] for j in range(len(ops)) if j != i]
            arrays = [ops[j].data for j in range(len(ops)) if j != i]
            avail = set(out).union(*others) if others else set(out)
            kept = "".join(ch for ch in sub_ if ch in avail)
            spec = ",".join([out] + others) + "->" + kept
            gi = np.einsum(spec, g, *arrays, optimize=len(arrays) > 1)
            if kept != sub_:
                # indices summed away inside this operand alone
                shape = [sizes[ch] if ch in kept else 1 for ch in sub_]
                perm = [kept.index(ch) for ch in sub_ if ch in kept]
                gi = np.broadcast_to(
                    gi.transpose(perm).reshape(shape), o.shape
                ).copy()
            grads.append(gi)
        return grads

    return _result(data, tuple(ops), back)


# -- normalisation and softmax --------------------------------------------------


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (a,), back)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def back(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result(y, (a,), back)


def layer_norm(a, gain, offset, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then ``* gain + offset``."""
    a, gain, offset = as_tensor(a), as_tensor(gain), as_tensor(offset)
    c = a.shape[-1]
    if gain.shape != (c,) or offset.shape != (c,):
        raise ShapeError(
            f"layer_norm: input {a.shape} needs gain/offset of shape ({c},), "
            f"got {gain.shape} and {offset.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gain.data + offset.data

    def back(g):
        gx = g * gain.data
        ga = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return ga, _unbias(g * xhat, gain), _unbias(g, offset)

    return _result(y.astype(a.dtype, copy=False), (a, gain, offset), back)


# -- indexing and structure -----------------------------------------------------


def gather_rows(a, index) -> Tensor:
    """``a[index]`` along axis 0; the adjoint is ``segment_sum``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        return (_scatter_rows(index, g, n).reshape(a.shape),)

    return _result(a.data[index], (a,), back)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` that share a segment id; the adjoint is ``gather_rows``."""
    a = as_tensor(a)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != a.shape[:1]:
        raise ShapeError(f"segment_sum: ids {ids.shape} do not match rows of {a.shape}")
    out = _scatter_rows(ids, a.data, num_segments).reshape((num_segments,) + a.shape[1:])
    return _result(out, (a,), lambda g: (g[ids],))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _result(data, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in ts]} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return np.split(g, bounds, axis=axis)

    return _result(data, tuple(ts), back)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    basic = _is_basic(index)

    def back(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), back)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.sum(), (a,), lambda g: (np.full(a.shape, g, dtype=a.dtype),))


def mean_all(a) -> Tensor:
    return scale(sum_all(a), 1.0 / as_tensor(a).data.size)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (B, K)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != logits.shape[:1]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    lp = log_softmax(logits)
    picked = getitem(lp, (np.arange(len(labels)), labels))
    return scale(sum_all(picked), -1.0 / len(labels))
