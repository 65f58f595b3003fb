"""Figure rendering for the report commands.

Every report path writes the delimited output first and then, via these
helpers, a PNG next to it. Rendering is headless (Agg).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .qat import MetricsRow  # noqa: E402
from .shift_mac import HwCostEntry  # noqa: E402

__all__ = ["training_curves", "pruning_sweep_figure", "mac_cost_figure", "size_figure"]


def training_curves(history: list[MetricsRow], path: str, title: str = "training") -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    train = [r for r in history if r.split == "train"]
    val = [r for r in history if r.split == "val"]
    ax1.plot([r.epoch for r in train], [r.loss for r in train], marker="o", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot([r.epoch for r in train], [r.accuracy for r in train], marker="o", label="train")
    if val:
        ax2.plot([r.epoch for r in val], [r.accuracy for r in val], marker="s", label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0.0, 1.02)
    ax2.legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def pruning_sweep_figure(rows: list[tuple[float, float, float]], path: str) -> None:
    """rows: (pruning factor, zero fraction, accuracy)."""
    pfs = [r[0] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(pfs, [r[1] * 100 for r in rows], marker="o", color="tab:blue", label="pruned %")
    ax1.set_xlabel("pruning factor")
    ax1.set_ylabel("pruned weights [%]", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(pfs, [r[2] * 100 for r in rows], marker="s", color="tab:red", label="accuracy")
    ax2.set_ylabel("accuracy [%]", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def mac_cost_figure(entries: list[HwCostEntry], path: str) -> None:
    labels = [e.label for e in entries]
    x = range(len(entries))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    width = 0.38
    ax1.bar([i - width / 2 for i in x], [e.lut for e in entries], width, label="LUT")
    ax1.bar([i + width / 2 for i in x], [e.ff for e in entries], width, label="FF")
    ax1.set_xticks(list(x), labels, rotation=20)
    ax1.set_ylabel("count")
    ax1.legend()
    ax2.bar([i - width / 2 for i in x], [e.rel_power for e in entries], width, label="rel. power")
    ax2.bar([i + width / 2 for i in x], [e.rel_area for e in entries], width, label="rel. area")
    ax2.set_xticks(list(x), labels, rotation=20)
    ax2.set_ylabel("relative to Uniform 8x8")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def size_figure(per_layer: list[tuple[str, int, int, int]], path: str) -> None:
    """per_layer: (name, weights, packed payload bytes, baseline payload bytes)."""
    names = [r[0] for r in per_layer]
    x = range(len(per_layer))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([i - width / 2 for i in x], [r[2] for r in per_layer], width, label="packed")
    ax.bar([i + width / 2 for i in x], [r[3] for r in per_layer], width, label="8-bit baseline")
    ax.set_xticks(list(x), names)
    ax.set_ylabel("payload bytes")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
