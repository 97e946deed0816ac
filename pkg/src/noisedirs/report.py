"""Figure rendering for run reports: loss curves, strips, heatmaps.

All figures are written to files (Agg backend); each emitting function
returns the path it wrote so manifests can register it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch

from .data import to_uint8
from .evaluation import DiversityReport, RescoreMatrix


def loss_curve_figure(trace: Sequence[float], path: str | Path, smooth: int = 25) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    values = np.asarray(trace, dtype=np.float64)
    ax.plot(values, lw=0.6, alpha=0.4, label="per step")
    if len(values) > smooth:
        kernel = np.ones(smooth) / smooth
        ax.plot(
            np.arange(smooth - 1, len(values)),
            np.convolve(values, kernel, mode="valid"),
            lw=1.6,
            label=f"moving mean ({smooth})",
        )
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def strip_figure(
    images: Sequence[torch.Tensor], scales: Sequence[float], path: str | Path, title: str = ""
) -> Path:
    path = Path(path)
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(1.4 * n, 1.8))
    if n == 1:
        axes = [axes]
    for ax, img, scale in zip(axes, images, scales):
        arr = to_uint8(img)
        ax.imshow(arr, cmap="gray" if arr.ndim == 2 else None, vmin=0, vmax=255)
        ax.set_title(f"{scale:+g}", fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def rescore_heatmap(matrix: RescoreMatrix, path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(matrix.col_labels), 1.0 + 0.4 * len(matrix.row_labels)))
    lim = max(1.0, float(np.abs(matrix.values).max()))
    im = ax.imshow(matrix.values, cmap="RdBu_r", vmin=-lim, vmax=lim)
    ax.set_xticks(range(len(matrix.col_labels)), matrix.col_labels, rotation=30, ha="right", fontsize=8)
    ax.set_yticks(range(len(matrix.row_labels)), matrix.row_labels, fontsize=8)
    for r in range(matrix.values.shape[0]):
        for c in range(matrix.values.shape[1]):
            ax.text(c, r, f"{matrix.values[r, c]:+.1f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, label="Δ probability (pp)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def diversity_heatmap(report: DiversityReport, path: str | Path) -> Path:
    path = Path(path)
    k = report.cross_similarity.shape[0]
    fig, axes = plt.subplots(1, 2, figsize=(3.2 + 0.4 * k, 2.6 + 0.25 * k))
    im = axes[0].imshow(report.cross_similarity, cmap="viridis", vmin=-1, vmax=1)
    axes[0].set_title("cross-direction cos", fontsize=9)
    fig.colorbar(im, ax=axes[0], fraction=0.046)
    axes[1].bar(range(k), report.self_consistency)
    axes[1].set_title("self-consistency", fontsize=9)
    axes[1].set_xlabel("direction")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
