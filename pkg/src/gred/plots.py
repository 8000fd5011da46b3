"""Figure rendering for the report paths (written next to the CSV output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(metrics: list[dict], path) -> None:
    """Loss and metric against epochs, one line per split."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for split in ("train", "val"):
        rows = [m for m in metrics if m["split"] == split]
        if not rows:
            continue
        epochs = [m["epoch"] for m in rows]
        axes[0].plot(epochs, [m["loss"] for m in rows], label=split)
        axes[1].plot(epochs, [m["metric"] for m in rows], label=split)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("metric")
    for ax in axes:
        ax.legend()
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eigenvalue_plot(rows: list[tuple[int, int, float, float]], path) -> None:
    """Scatter the learned eigenvalues inside the unit circle, one color per layer."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    circle = np.exp(1j * np.linspace(0, 2 * np.pi, 256))
    ax.plot(circle.real, circle.imag, color="gray", lw=0.8)
    layers = sorted({r[0] for r in rows})
    cmap = plt.get_cmap("viridis")
    for li in layers:
        pts = [(m * np.cos(p), m * np.sin(p)) for layer, _, m, p in rows if layer == li]
        xs, ys = zip(*pts)
        ax.scatter(xs, ys, s=12, label=f"layer {li}",
                   color=cmap(li / max(len(layers) - 1, 1)))
    ax.set_aspect("equal")
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    if len(layers) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_margin_plot(lambdas: np.ndarray, margins: np.ndarray, path) -> None:
    """Injectivity margins per sampled eigenvalue, log scale."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.scatter(lambdas, np.maximum(margins, 1e-18), s=4, alpha=0.5)
    ax.set_yscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("smallest margin over difference sequences")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
