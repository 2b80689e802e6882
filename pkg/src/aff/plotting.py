"""Matplotlib figures for the CLI report paths. Rendering is headless (Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.linestyle": ":",
    "grid.linewidth": 0.5,
    "font.size": 9,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_clusters(positions, assignment, path, title=None):
    """Tokens coloured by cluster, with the curve path through cluster centroids."""
    pos = np.asarray(positions, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 5))
        k = assignment.cluster_count
        # shuffle colours so neighbouring clusters contrast
        shade = np.random.default_rng(0).permutation(k)[assignment.cluster_of]
        ax.scatter(pos[:, 0], pos[:, 1], c=shade, cmap="tab20", s=8, linewidths=0)
        cents = np.zeros((k, 2))
        np.add.at(cents, assignment.cluster_of, pos)
        cents /= assignment.cluster_sizes[:, None]
        ax.plot(cents[:, 0], cents[:, 1], color="0.3", lw=0.5)
        ax.set_aspect("equal")
        ax.invert_yaxis()
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(title or f"{k} clusters")
        return _save(fig, path)


def plot_stages(image, records, path):
    """One panel per stage: the image with that stage's tokens in red."""
    img = np.asarray(image)
    n = len(records)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.8), squeeze=False)
        for ax, (stage, pos) in zip(axes[0], records):
            ax.imshow(img, cmap="gray", vmin=0, vmax=255 if img.dtype == np.uint8 else 1,
                      interpolation="nearest")
            pos = np.asarray(pos).reshape(-1, 2)
            ax.scatter(pos[:, 0] * 4, pos[:, 1] * 4, s=6, c="red", marker="s", linewidths=0)
            ax.set_title(f"stage {stage}: {len(pos)} tokens")
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)


def plot_metrics(history, path):
    """Loss, accuracy and focus ratio per epoch."""
    ep = [h.epoch for h in history]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.8))
        for ax, key, label in zip(axes, ("loss", "acc", "focus_ratio"),
                                  ("train loss", "test accuracy", "focus ratio")):
            ax.plot(ep, [getattr(h, key) for h in history], marker="o", ms=3)
            ax.set_xlabel("epoch")
            ax.set_title(label)
        axes[2].axhline(1.0, color="0.5", lw=0.8, ls="--")
        return _save(fig, path)
