"""PNG figures for reports: confusion heatmaps and arousal/valence scatter."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .corpus import CLASSES  # noqa: E402


def confusion_heatmap(cm, path, title: str = "", labels=CLASSES) -> Path:
    """Row-normalized heatmap; raw counts are printed in each cell."""
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(frac, vmin=0, vmax=1, cmap="Blues")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, f"{int(cm[i, j])}", ha="center", va="center",
                    color="white" if frac[i, j] > 0.5 else "black", fontsize=9)
    ax.set_xticks(range(len(labels)), labels, rotation=30)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title, fontsize=10)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def av_scatter(pred, target, path, title: str = "") -> Path:
    """Predicted vs rated arousal and valence, one panel each."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.4))
    for k, (ax, name) in enumerate(zip(axes, ("arousal", "valence"))):
        ax.scatter(target[:, k], pred[:, k], s=8, alpha=0.6)
        ax.plot([1, 5], [1, 5], "k--", lw=0.8)
        ax.set_xlim(1, 5)
        ax.set_ylim(1, 5)
        ax.set_xlabel(f"rated {name}")
        ax.set_ylabel(f"predicted {name}")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
