"""AutoFocusFormer-style backbone: patch embedding, cluster/attend/downsample stages
and a mean-pooled classification head.

A batch of images is processed as one flat token array; ``offsets`` mark where
each image's tokens start. Clustering and selection are per image (numpy), all
feature arithmetic runs once over the whole batch through the autodiff engine.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attention import init_block, transformer_block
from .clustering import balanced_cluster, cluster_count_for
from .downsample import downsample_batch_select, init_downsample, importance_scores, merge_neighborhoods
from .layers import init_linear, linear
from .neighborhood import NeighborTable, build_neighbor_table, full_table


@dataclass
class StageConfig:
    blocks: int
    dim: int
    heads: int
    mlp_ratio: float = 2.0
    cluster_size: int = 8
    neighborhood_size: int = 48

    @property
    def R(self) -> int:
        return self.neighborhood_size // self.cluster_size


@dataclass
class ModelConfig:
    stages: list
    keep_fraction: float = 0.25
    alpha: float = 4.0
    global_last_stage: bool = True
    global_max_tokens: int = 64
    in_channels: int = 1
    num_classes: int = 2
    curve: str = "scanline"
    pixel_mean: float = 0.0
    pixel_std: float = 1.0

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages]
        if not self.stages:
            raise ValueError("a model needs at least one stage")
        prev = 0
        for i, s in enumerate(self.stages, 1):
            if s.neighborhood_size % s.cluster_size:
                raise ValueError(f"stage {i}: neighborhood size {s.neighborhood_size} "
                                 f"is not a multiple of cluster size {s.cluster_size}")
            if s.dim % s.heads:
                raise ValueError(f"stage {i}: {s.heads} heads do not divide dim {s.dim}")
            if s.dim < prev:
                raise ValueError(f"stage {i}: channel dims must be nondecreasing")
            prev = s.dim
        if not self.pixel_std > 0:
            raise ValueError(f"pixel_std must be positive, got {self.pixel_std}")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **kw) -> "ModelConfig":
        d = asdict(self)
        d.update(kw)
        return ModelConfig(**d)


def _stages(blocks, dims, heads, mlp_ratio, cluster_size, neighborhood_size):
    return [StageConfig(b, d, h, mlp_ratio, cluster_size, neighborhood_size)
            for b, d, h in zip(blocks, dims, heads)]


def aff_nano(**kw) -> ModelConfig:
    return ModelConfig(_stages((1, 1, 2, 1), (16, 32, 64, 96), (1, 2, 4, 8), 2, 8, 24), **kw)


def aff_mini(**kw) -> ModelConfig:
    return ModelConfig(_stages((2, 2, 6, 2), (32, 128, 256, 384), (2, 4, 8, 16), 2, 8, 48), **kw)


PRESETS = {"nano": aff_nano, "mini": aff_mini}


# -- parameters ----------------------------------------------------------------


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ad.ParameterStore:
    store = ad.ParameterStore(seed=seed, dtype=dtype)
    d0 = config.stages[0].dim
    store.add("embed.conv1.weight", (9 * config.in_channels, d0 // 2), init="fan_in")
    store.add("embed.conv1.bias", (d0 // 2,), init="zeros")
    store.add("embed.conv2.weight", (9 * (d0 // 2), d0), init="fan_in")
    store.add("embed.conv2.bias", (d0,), init="zeros")
    for i, s in enumerate(config.stages, 1):
        for b in range(s.blocks):
            init_block(store, f"stage{i}.block{b}", s.dim, s.heads, s.mlp_ratio)
        if i < len(config.stages):
            init_downsample(store, f"stage{i}.down", s.dim, config.stages[i].dim)
    init_linear(store, "head.fc", config.stages[-1].dim, config.num_classes)
    return store


# -- patch embedding -------------------------------------------------------------


def conv_gather_index(batch: int, height: int, width: int) -> np.ndarray:
    """im2col rows for a 3x3, stride-2, pad-1 convolution.

    Input rows are ``(b, y, x)`` row-major; the index ``batch*height*width``
    stands for the zero padding row. Output shape ``(batch*ho*wo, 9)``, taps
    ordered ``(dy, dx)`` row-major.
    """
    ho, wo = (height + 1) // 2, (width + 1) // 2
    b, i, j = np.meshgrid(np.arange(batch), np.arange(ho), np.arange(wo), indexing="ij")
    taps = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            y, x = 2 * i + dy, 2 * j + dx
            inside = (y >= 0) & (y < height) & (x >= 0) & (x < width)
            idx = (b * height + y) * width + x
            taps.append(np.where(inside, idx, batch * height * width))
    return np.stack(taps, axis=-1).reshape(-1, 9)


def conv3x3_s2(x, batch, height, width, store, name):
    """Stride-2 3x3 convolution on ``(batch*height*width, cin)`` rows."""
    cin = x.shape[1]
    padded = ad.concat([x, ad.constant(np.zeros((1, cin), dtype=x.dtype))], axis=0)
    cols = ad.gather_rows(padded, conv_gather_index(batch, height, width))
    cols = ad.reshape(cols, (cols.shape[0], 9 * cin))
    return ad.add(ad.matmul(cols, store[f"{name}.weight"]), store[f"{name}.bias"])


def _as_batch(images) -> np.ndarray:
    arr = np.asarray(images)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    elif arr.ndim == 3:
        arr = arr[None] if arr.shape[-1] in (1, 3) and arr.shape[0] not in (1, 3) else arr[..., None]
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    return arr


def patch_embed(images, store):
    """Two stride-2 3x3 convolutions with GELU between.

    ``images`` is ``(B, H, W, C)`` with H, W divisible by 4. Returns the
    ``(B*H/4*W/4, C0)`` feature tensor and per-image lattice positions
    ``(H/4*W/4, 2)`` as (x, y).
    """
    images = _as_batch(images)
    b, h, w, c = images.shape
    if h < 4 or w < 4 or h % 4 or w % 4:
        raise ValueError(f"image dims must be divisible by 4, got {h}x{w}")
    x = ad.constant(images.reshape(-1, c).astype(store.dtype))
    x = ad.gelu(conv3x3_s2(x, b, h, w, store, "embed.conv1"))
    x = conv3x3_s2(x, b, h // 2, w // 2, store, "embed.conv2")
    ys, xs = np.divmod(np.arange((h // 4) * (w // 4)), w // 4)
    return x, np.stack([xs, ys], axis=1).astype(np.float64)


# -- stages ----------------------------------------------------------------------


@dataclass
class StageRecord:
    """What one stage did to each image, for dumps and metrics."""

    stage: int
    positions: list
    g: list = field(default_factory=list)
    s: list = field(default_factory=list)
    reserved: list = field(default_factory=list)
    selected: list = field(default_factory=list)


def _image_table(pos, stage: StageConfig, curve: str, use_global: bool) -> NeighborTable:
    if use_global:
        return full_table(pos)
    assignment = balanced_cluster(pos, stage.cluster_size, curve)
    R = min(stage.R, cluster_count_for(len(pos), stage.cluster_size))
    return build_neighbor_table(pos, assignment, R)


def batch_table(positions: list, stage: StageConfig, curve: str, use_global: bool) -> NeighborTable:
    """Per-image neighbour tables stacked into one table over the flat token array.

    Rows narrower than the widest are padded by repeating their last neighbour.
    """
    cache, tables = {}, []
    for pos in positions:
        key = pos.tobytes()
        if key not in cache:
            cache[key] = _image_table(pos, stage, curve, use_global)
        tables.append(cache[key])
    width = max(t.M for t in tables)
    idx, rel, offset = [], [], 0
    for pos, t in zip(positions, tables):
        pad = width - t.M
        i, r = t.indices, t.rel_pos
        if pad:
            i = np.concatenate([i, np.repeat(i[:, -1:], pad, axis=1)], axis=1)
            r = np.concatenate([r, np.repeat(r[:, -1:], pad, axis=1)], axis=1)
        idx.append(i + offset)
        rel.append(r)
        offset += len(pos)
    return NeighborTable(np.concatenate(idx), np.concatenate(rel), tables[0].R)


def stage_forward(x, positions: list, index: int, store, config: ModelConfig):
    """Cluster once, run the stage's blocks, then downsample unless it is the last stage.

    Returns the new features, the per-image positions and a ``StageRecord``.
    """
    stage = config.stages[index - 1]
    last = index == len(config.stages)
    use_global = (config.global_last_stage and last
                  and max(len(p) for p in positions) <= config.global_max_tokens)
    table = batch_table(positions, stage, config.curve, use_global)
    for b in range(stage.blocks):
        x = transformer_block(x, table, store, f"stage{index}.block{b}", stage.heads)
    rec = StageRecord(index, positions)
    if last:
        return x, positions, rec
    prefix = f"stage{index}.down"
    s = importance_scores(x, store, prefix)
    centers, kept = downsample_batch_select(positions, s.data, index, config.alpha,
                                            config.keep_fraction, rec)
    x = merge_neighborhoods(centers, np.concatenate(positions), x, table, s, store, prefix)
    return x, kept, rec


def forward(images, store, config: ModelConfig, record: bool = False):
    """Logits ``(B, num_classes)`` and, if ``record``, a list of ``StageRecord``.

    Pixels are standardised with the config's ``pixel_mean``/``pixel_std`` first.
    """
    images = (_as_batch(images) - config.pixel_mean) / config.pixel_std
    x, lattice = patch_embed(images, store)
    batch = x.shape[0] // len(lattice)
    positions = [lattice] * batch
    records = []
    for i in range(1, len(config.stages) + 1):
        x, positions, rec = stage_forward(x, positions, i, store, config)
        records.append(rec)
    counts = np.array([len(p) for p in positions])
    seg = np.repeat(np.arange(batch), counts)
    pooled = ad.segment_sum(x, seg, batch)
    inv = np.repeat((1.0 / counts)[:, None], x.shape[1], axis=1).astype(x.dtype)
    pooled = ad.mul(pooled, ad.constant(inv))
    logits = linear(pooled, store, "head.fc")
    return (logits, records) if record else logits


def classify(image, store, config: ModelConfig) -> np.ndarray:
    """Logit vector for one image."""
    return forward(image, store, config).data[0]
