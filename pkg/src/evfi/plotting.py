"""Report figures written to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STAGE_COLORS = {"synthesis": "tab:blue", "warping": "tab:orange", "averaging": "tab:green"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_loss_curves(histories: Mapping[str, Sequence[float]], path: str | Path) -> Path:
    """One panel per stage: raw per-step loss plus a running median."""
    fig, axes = plt.subplots(1, len(histories), figsize=(4 * len(histories), 3.2), squeeze=False)
    for ax, (stage, losses) in zip(axes[0], histories.items()):
        y = np.asarray(losses, dtype=float)
        x = np.arange(1, len(y) + 1)
        color = STAGE_COLORS.get(stage, "tab:gray")
        ax.plot(x, y, color=color, alpha=0.35, lw=1)
        k = max(1, len(y) // 10)
        smooth = [np.median(y[max(0, i - k + 1):i + 1]) for i in range(len(y))]
        ax.plot(x, smooth, color=color, lw=2)
        ax.set_title(stage)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_metric_hist(records: Sequence[Mapping], path: str | Path, key: str = "psnr") -> Path:
    """Per-sample metric distribution of the final frame and both branch candidates."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    series = [(key, "final"), (f"{key}_synthesis", "synthesis"), (f"{key}_warping", "warping")]
    for field, label in series:
        vals = [r[field] for r in records if field in r]
        if vals:
            ax.hist(vals, bins=min(20, max(5, len(vals) // 2)), alpha=0.5, label=label)
    ax.set_xlabel(key.upper())
    ax.set_ylabel("samples")
    ax.legend()
    return _save(fig, path)


def plot_ablation(rows: Sequence[Mapping], path: str | Path, key: str = "psnr") -> Path:
    """Grouped horizontal bars, one block per ablation group."""
    groups: dict[str, list] = {}
    for r in rows:
        groups.setdefault(r["group"], []).append(r)
    fig, axes = plt.subplots(1, len(groups), figsize=(3.6 * len(groups), 3.0), squeeze=False)
    for ax, (g, rs) in zip(axes[0], groups.items()):
        vals = [r[key] for r in rs]
        ax.barh(range(len(rs)), vals, color="tab:blue", alpha=0.7)
        ax.set_yticks(range(len(rs)), [r["variant"] for r in rs])
        ax.invert_yaxis()
        lo = min(vals)
        ax.set_xlim(lo - 2.0, max(vals) + 1.0)
        for i, v in enumerate(vals):
            ax.text(v, i, f" {v:.2f}", va="center", fontsize=8)
        ax.set_title(g)
        ax.set_xlabel(key.upper())
    return _save(fig, path)


def plot_weight_maps(images: Sequence[np.ndarray], weights: Sequence[np.ndarray],
                     titles: Sequence[str], path: str | Path) -> Path:
    """Interpolated frames above their blend weight maps (1 = synthesis)."""
    n = len(images)
    fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.4), squeeze=False)
    for j in range(n):
        axes[0, j].imshow(np.clip(images[j], 0, 1))
        axes[0, j].set_title(titles[j], fontsize=8)
        axes[1, j].imshow(weights[j], cmap="gray", vmin=0, vmax=1)
        for ax in axes[:, j]:
            ax.axis("off")
    return _save(fig, path)
