"""Binary PGM/PPM codec, token and cluster CSV dumps, and retained-token overlays."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

TOKEN_HEADER = ("stage", "x", "y", "g", "s", "reserved", "selected")
STRIDE = 4
RED = (255, 0, 0)


class ImageFormatError(ValueError):
    """Malformed or unsupported netpbm data; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


# -- netpbm ------------------------------------------------------------------------


def _header_tokens(buf: bytes, count: int, start: int = 0):
    """First ``count`` whitespace-separated header fields after ``start``, skipping ``#`` comments.

    Returns ``[(token, offset), ...]`` and the offset of the single whitespace
    byte that ends the header.
    """
    out, i, n = [], start, len(buf)
    while len(out) < count:
        while i < n and (buf[i:i + 1].isspace() or buf[i:i + 1] == b"#"):
            if buf[i:i + 1] == b"#":
                while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                    i += 1
            else:
                i += 1
        if i >= n:
            raise ImageFormatError("truncated header", i)
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        out.append((buf[start:i], start))
    if i >= n or not buf[i:i + 1].isspace():
        raise ImageFormatError("header must end with one whitespace byte", i)
    return out, i


def decode_image(buf: bytes) -> np.ndarray:
    """Decode P5 (gray) or P6 (RGB) bytes into ``(H, W)`` or ``(H, W, 3)`` uint8."""
    if len(buf) < 2:
        raise ImageFormatError("truncated header", len(buf))
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}, expected P5 or P6", 0)
    fields, end = _header_tokens(buf, 3, start=2)
    values = []
    for name, (tok, off) in zip(("width", "height", "maxval"), fields):
        if not tok.isdigit():
            raise ImageFormatError(f"bad {name} {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} not supported, only 255", fields[2][1])
    if width < 1 or height < 1:
        raise ImageFormatError(f"empty image {width}x{height}", fields[0][1])
    channels = 1 if magic == b"P5" else 3
    start = end + 1
    need = width * height * channels
    if len(buf) - start < need:
        raise ImageFormatError(f"truncated payload: need {need} bytes, have {len(buf) - start}",
                               len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=start)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape).copy()


def encode_image(image) -> bytes:
    arr = to_uint8(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def read_image(path) -> np.ndarray:
    try:
        return decode_image(Path(path).read_bytes())
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {str(exc).rsplit(' (byte', 1)[0]}", exc.offset) from None


def write_image(path, image):
    Path(path).write_bytes(encode_image(image))


def to_uint8(image) -> np.ndarray:
    """uint8 as is; floats are taken as unit range, clipped and rounded."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# -- token dumps --------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"


def token_rows(stage: int, positions, g=None, s=None, reserved=None, selected=None) -> list[tuple]:
    """CSV rows for one stage of one image.

    A stage that did not downsample (the last one) has no scores: pass
    ``g=s=None`` and they are written as nan, with reserved 0 and selected 1.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    if s is None:
        g = s = np.full(n, np.nan)
        reserved, selected = np.zeros(n, bool), np.ones(n, bool)
    return [(stage, _fmt(x), _fmt(y), _fmt(gi), _fmt(si), int(r), int(c))
            for (x, y), gi, si, r, c in zip(pos, g, s, reserved, selected)]


def record_rows(record, image: int = 0) -> list[tuple]:
    """Token rows of one image from a batched ``StageRecord``."""
    if record.s:
        return token_rows(record.stage, record.positions[image], record.g[image], record.s[image],
                          record.reserved[image], record.selected[image])
    return token_rows(record.stage, record.positions[image])


def write_tokens(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TOKEN_HEADER)
        w.writerows(rows)


def read_tokens(path) -> dict[str, np.ndarray]:
    """Columns of a token CSV as arrays (positions as float, flags as bool)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TOKEN_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TOKEN_HEADER)}, got {header}")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * len(TOKEN_HEADER)
    out = {}
    for name, col in zip(TOKEN_HEADER, cols):
        kind = int if name == "stage" else bool if name in ("reserved", "selected") else float
        if kind is bool:
            out[name] = np.array([int(v) for v in col], dtype=bool)
        else:
            out[name] = np.array([kind(v) for v in col], dtype=np.int64 if kind is int else np.float64)
    return out


def read_positions(path) -> np.ndarray:
    """``(N, 2)`` positions from any CSV with ``x`` and ``y`` columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: needs x and y columns, got {reader.fieldnames}")
        pts = [(float(r["x"]), float(r["y"])) for r in reader]
    if not pts:
        raise ValueError(f"{path}: no tokens")
    return np.array(pts, dtype=np.float64)


def assignment_csv(positions, assignment) -> str:
    """``token_index,x,y,cluster_id`` in token order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["token_index", "x", "y", "cluster_id"])
    for i, ((x, y), c) in enumerate(zip(positions, assignment.cluster_of)):
        w.writerow([i, _fmt(x), _fmt(y), int(c)])
    return buf.getvalue()


# -- overlays -----------------------------------------------------------------------


def render_overlay(image, positions) -> np.ndarray:
    """RGB uint8 copy of ``image`` with a pure-red pixel at 4x each token position."""
    base = to_uint8(image)
    if base.ndim == 3 and base.shape[2] == 1:
        base = base[:, :, 0]
    rgb = np.repeat(base[:, :, None], 3, axis=2) if base.ndim == 2 else base.copy()
    h, w = rgb.shape[:2]
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if len(pos) == 0:
        return rgb
    lat_h, lat_w = h // STRIDE, w // STRIDE
    x, y = pos[:, 0], pos[:, 1]
    bad = (x < 0) | (y < 0) | (x >= lat_w) | (y >= lat_h) | (x != np.round(x)) | (y != np.round(y))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"token {i} at ({x[i]}, {y[i]}) is outside the {lat_w}x{lat_h} token lattice")
    rgb[(y * STRIDE).astype(int), (x * STRIDE).astype(int)] = RED
    return rgb
