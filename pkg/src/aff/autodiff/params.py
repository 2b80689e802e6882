"""Named parameter store with seeded initialisation and a flat binary format.

File layout (all integers little-endian)::

    b"AFFP" | u32 version (=1) | u32 tensor count
    per tensor:
        u16 name length | utf-8 name | u8 dtype code (0=float32, 1=float64)
        u8 ndim | u32 dims[ndim] | raw little-endian payload, C order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .engine import Tensor

MAGIC = b"AFFP"
VERSION = 1
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {v: k for k, v in _CODES.items()}


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class ParameterStore:
    """Ordered mapping of unique names to leaf tensors."""

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape, init: str = "trunc_normal", std: float = 0.02) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "trunc_normal":
            data = truncated_normal(self.rng, shape, std)
        elif init == "fan_in":
            data = truncated_normal(self.rng, shape, 1.0 / np.sqrt(shape[0]))
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            data = self.rng.standard_normal(shape) * std
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def values(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def astype(self, dtype) -> "ParameterStore":
        """Copy of the store in another precision (grads dropped)."""
        out = ParameterStore(dtype=dtype)
        for name, p in self._params.items():
            out._params[name] = Tensor(p.data.astype(dtype), requires_grad=True, name=name)
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True):
        if strict and set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            if name not in self._params:
                continue
            p = self._params[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != {p.shape}")
            p.data = arr.astype(self.dtype)

    def save(self, path):
        save_state(self.state(), path)

    def load(self, path, strict: bool = True):
        self.load_state(load_state(path), strict=strict)


def save_state(state: dict[str, np.ndarray], path):
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_state(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a parameter file (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 12
    state = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            code, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            dtype = _DTYPES[code].newbyteorder("<")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if off + nbytes > len(buf):
                raise ValueError(f"{path}: truncated payload for {name!r} at byte {off}")
            state[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                        offset=off).reshape(shape).astype(dtype.newbyteorder("="))
            off += nbytes
    except struct.error as exc:
        raise ValueError(f"{path}: truncated header at byte {off}") from exc
    return state
