"""In-place optimisers for ``ParameterStore`` leaves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def sgd_step(params, lr: float, grads=None):
    """``p -= lr * g``. Gradients default to each parameter's ``.grad``."""
    for i, p in enumerate(params):
        g = p.grad if grads is None else grads[i]
        if g is not None:
            p.data -= p.data.dtype.type(lr) * g


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, state: AdamWState, lr: float, wd: float = 0.0, grads=None,
               no_decay=lambda p: False):
    """Decoupled weight decay Adam (one step for every parameter with a gradient)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, p in enumerate(params):
        g = p.grad if grads is None else grads[i]
        if g is None:
            continue
        key = p.name if p.name is not None else i
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if wd and not no_decay(p):
            p.data -= p.data.dtype.type(lr * wd) * p.data
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * step).astype(p.data.dtype, copy=False)
