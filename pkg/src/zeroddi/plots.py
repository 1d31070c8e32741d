"""Figure rendering for the report paths; everything lands next to the
delimited output as PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 110, "metadata": {"Software": "zeroddi"}}


def save_history_plot(history: list[dict], path: str | Path) -> Path:
    """Loss components per epoch."""
    path = Path(path)
    epochs = [rec["epoch"] for rec in history]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for key, style in (("total", "-"), ("align", "--"), ("cla", ":"), ("ins", "-.")):
        ax.plot(epochs, [rec[key] for rec in history], style, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per instance")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_attention_heatmap(a: np.ndarray, path: str | Path, title: str = "") -> Path:
    """Token-by-substructure attention weights."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    im = ax.imshow(a, aspect="auto", cmap="viridis", vmin=0.0)
    ax.set_xlabel("token index")
    ax.set_ylabel("substructure index")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_embedding_scatter(
    coords: np.ndarray,
    labels: list[str],
    path: str | Path,
    title: str = "pair representations (2-D PCA)",
) -> Path:
    path = Path(path)
    classes = sorted(set(labels))
    cmap = plt.get_cmap("tab20")
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    for i, c in enumerate(classes):
        idx = [j for j, y in enumerate(labels) if y == c]
        ax.scatter(
            coords[idx, 0], coords[idx, 1],
            s=12, color=cmap(i % 20), label=c if len(classes) <= 12 else None,
        )
    if len(classes) <= 12:
        ax.legend(frameon=False, fontsize=7, markerscale=0.8)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_metric_bars(metrics: dict[str, float], path: str | Path, title: str = "") -> Path:
    """Flat named metrics as a horizontal bar chart."""
    path = Path(path)
    names = list(metrics)
    values = [metrics[k] for k in names]
    fig, ax = plt.subplots(figsize=(5.6, 0.5 + 0.4 * len(names)))
    ax.barh(range(len(names)), values, color="#4878a8")
    ax.set_yticks(range(len(names)), names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("percent")
    if title:
        ax.set_title(title, fontsize=9)
    for i, v in enumerate(values):
        ax.text(v, i, f" {v:.2f}", va="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
