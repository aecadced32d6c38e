"""Matplotlib renderings written next to the delimited outputs."""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_heatmap(matrix: np.ndarray, path: str, title: str,
                 xlabel: str = "", ylabel: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(np.asarray(matrix), aspect="auto", cmap="viridis")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curves(log_path: str, out_path: str) -> None:
    steps, series = [], {"total": [], "ent": [], "rel": [], "l1": [], "giou": []}
    with open(log_path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            steps.append(rec["step"])
            for key in series:
                series[key].append(rec[key])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for key, values in series.items():
        ax.plot(steps, values, label=key, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_metrics_bar(report, out_path: str) -> None:
    names = ["triple_p", "triple_r", "triple_f1", "pair_p", "pair_r", "pair_f1",
             "rel_acc", "ent_acc"]
    values = [getattr(report, n) for n in names]
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    ax.bar(range(len(names)), values, color="tab:blue")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=7)
    ax.set_title("evaluation metrics")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
