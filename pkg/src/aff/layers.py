"""Parameterised building blocks shared by attention, downsampling and the model."""

from __future__ import annotations

from . import autodiff as ad


def init_linear(store, name, fan_in, fan_out, bias=True):
    store.add(f"{name}.weight", (fan_in, fan_out))
    if bias:
        store.add(f"{name}.bias", (fan_out,), init="zeros")


def linear(x, store, name):
    """``x @ W (+ b)`` over the last axis of a tensor of any rank."""
    w = store[f"{name}.weight"]
    lead = x.shape[:-1]
    y = ad.matmul(x if x.ndim == 2 else ad.reshape(x, (-1, x.shape[-1])), w)
    bias = f"{name}.bias"
    if bias in store:
        y = ad.add(y, store[bias])
    return y if x.ndim == 2 else ad.reshape(y, lead + (w.shape[1],))


def init_norm(store, name, dim):
    store.add(f"{name}.gain", (dim,), init="ones")
    store.add(f"{name}.offset", (dim,), init="zeros")


def norm(x, store, name):
    return ad.layer_norm(x, store[f"{name}.gain"], store[f"{name}.offset"])
