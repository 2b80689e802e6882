"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradReport:
    name: str
    max_rel_err: float
    grad_norm: float
    checked: int

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def rel_err(analytic, numeric, floor: float = 1e-7):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _value(f) -> float:
    out = f()
    val = float(np.asarray(out.data).reshape(-1)[0]) if out.data.size == 1 else None
    if val is None:
        raise ValueError(f"grad_check needs a scalar loss, got shape {out.shape}")
    if not np.isfinite(val):
        raise FloatingPointError(f"non-finite loss value {val}")
    return val


def grad_check(f, params, samples: int = 32, h: float = 1e-5, seed: int = 0,
               floor: float = 1e-7) -> list[GradReport]:
    """Compare backprop gradients of ``f()`` with central differences.

    ``params`` is an iterable of ``(name, Tensor)`` pairs (a ``ParameterStore``
    works). Up to ``samples`` coordinates per tensor are checked, all of them
    when the tensor is smaller. Parameters must be float64.
    """
    params = list(params)
    for name, p in params:
        if p.data.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.data.dtype}")
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite loss value")
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params}
    rng = np.random.default_rng(seed)
    reports = []
    for name, p in params:
        flat = p.data.reshape(-1)
        if flat.size <= samples:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=samples, replace=False))
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            up = _value(f)
            flat[c] = orig - h
            down = _value(f)
            flat[c] = orig
            numeric[j] = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)[coords]
        err = rel_err(a, numeric, floor)
        reports.append(GradReport(name, float(err.max()) if len(err) else 0.0,
                                  float(np.linalg.norm(analytic[name])), len(coords)))
    return reports
