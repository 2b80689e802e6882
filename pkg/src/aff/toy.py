"""Synthetic textured-patch classification task and a small AdamW training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, forward, init_params

log = logging.getLogger(__name__)

PATCH = 4
CLASSES = ("checkerboard", "stripes")


@dataclass
class ToyDataset:
    images: np.ndarray  # (n, S, S, 1) float64 in [0, 1]
    labels: np.ndarray  # (n,) 0 = checkerboard, 1 = stripes
    boxes: np.ndarray  # (n, 4) x, y, width, height in pixels

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ToyDataset":
        return ToyDataset(self.images[idx], self.labels[idx], self.boxes[idx])


def _texture(label: int, vertical: bool) -> np.ndarray:
    # 2-pixel cells: finer patterns alias away under the stride-2 embedding
    i, j = np.mgrid[:PATCH, :PATCH] // 2
    bits = (i + j) % 2 if label == 0 else (j if vertical else i) % 2
    return 0.6 + 0.4 * bits


def make_toy_dataset(seed: int, n: int, image_size: int = 32) -> ToyDataset:
    """Dark noise background with one bright 4x4 textured patch per image.

    Class 0 is a checkerboard of 2x2-pixel cells, class 1 stripes two pixels
    wide (random orientation). Background pixels lie in [0, 0.1]; patch
    pixels in {0.6, 1.0}, so the patch differs from any background pixel by
    at least 0.5.
    """
    if n < 2:
        raise ValueError("need at least 2 images")
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 0.1, size=(n, image_size, image_size, 1))
    labels = rng.integers(0, 2, size=n)
    corners = rng.integers(0, image_size - PATCH + 1, size=(n, 2))
    vertical = rng.integers(0, 2, size=n).astype(bool)
    for k in range(n):
        x, y = corners[k]
        images[k, y:y + PATCH, x:x + PATCH, 0] = _texture(labels[k], vertical[k])
    boxes = np.column_stack([corners, np.full((n, 2), PATCH)])
    return ToyDataset(images, labels, boxes)


def focus_ratio(final_positions: list, boxes: np.ndarray, image_size: int) -> float:
    """Mean fraction of final tokens inside the patch over the patch's area fraction.

    Token lattice positions map to image pixels by a factor of 4.
    """
    inside = []
    for pos, (x, y, w, h) in zip(final_positions, boxes):
        px, py = pos[:, 0] * 4, pos[:, 1] * 4
        hit = (px >= x) & (px < x + w) & (py >= y) & (py < y + h)
        inside.append(hit.mean())
    area = boxes[:, 2] * boxes[:, 3] / float(image_size * image_size)
    return float(np.mean(inside) / np.mean(area))


def with_pixel_stats(config: ModelConfig, images) -> ModelConfig:
    """Config whose input standardisation matches ``images``."""
    images = np.asarray(images, dtype=np.float64)
    return config.replace(pixel_mean=round(float(images.mean()), 6),
                          pixel_std=round(float(images.std()), 6))


def evaluate(store, config: ModelConfig, data: ToyDataset, batch_size: int = 100):
    """Accuracy and focus ratio on ``data``."""
    correct, finals = 0, []
    for start in range(0, len(data), batch_size):
        part = data.subset(slice(start, start + batch_size))
        logits, records = forward(part.images, store, config, record=True)
        correct += int((logits.data.argmax(axis=1) == part.labels).sum())
        last = records[-1]
        finals.extend(last.positions)
    size = data.images.shape[1]
    return correct / len(data), focus_ratio(finals, data.boxes, size)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    acc: float
    focus_ratio: float


def train_toy(config: ModelConfig, train: ToyDataset, test: ToyDataset, epochs: int,
              lr: float = 2e-3, seed: int = 0, batch_size: int = 32, weight_decay: float = 0.05,
              store=None):
    """AdamW + cross-entropy training.

    Returns ``(store, config, history)``: the config comes back with pixel
    statistics fitted on ``train``. ``acc`` and ``focus_ratio`` in the log are
    measured on ``test``.
    """
    config = with_pixel_stats(config, train.images)
    store = init_params(config, seed=seed, dtype=np.float32) if store is None else store
    state = ad.AdamWState()
    rng = np.random.default_rng(seed)
    params = store.values()
    history = []
    for epoch in range(1, epochs + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, acc, focus = _epoch(store, config, train, test, state, rng, params, lr,
                                          weight_decay, batch_size)
        except FloatingPointError as exc:
            raise FloatingPointError(f"training diverged in epoch {epoch}: {exc}") from exc
        history.append(EpochLog(epoch, loss, acc, focus))
        log.info("epoch %d loss %.4f acc %.4f focus %.3f", epoch, loss, acc, focus)
    return store, config, history


def _epoch(store, config, train, test, state, rng, params, lr, weight_decay, batch_size):
    # norms, biases and blank slots are not decayed
    no_decay = lambda p: p.ndim == 1  # noqa: E731
    order = rng.permutation(len(train))
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        store.zero_grad()
        loss = ad.cross_entropy(forward(train.images[idx], store, config), train.labels[idx])
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"loss is {value}")
        loss.backward()
        ad.adamw_step(params, state, lr, weight_decay, no_decay=no_decay)
        total += value * len(idx)
    acc, focus = evaluate(store, config, test)
    return total / len(order), acc, focus


def write_metrics(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "acc", "focus_ratio"])
        for row in history:
            w.writerow([row.epoch, f"{row.loss:.6f}", f"{row.acc:.6f}", f"{row.focus_ratio:.6f}"])
