"""PNG renderings of the report CSVs (convergence curves, comparison bars, sweeps)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_curves(curves: dict[str, Sequence[dict]], path) -> Path:
    """One panel per domain, one line per run; rows need epoch, cer_org, cer_tar."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
    for name, rows in curves.items():
        epochs = [int(r["epoch"]) for r in rows]
        axes[0].plot(epochs, [float(r["cer_org"]) for r in rows], marker="o", label=name)
        axes[1].plot(epochs, [float(r["cer_tar"]) for r in rows], marker="o", label=name)
    for ax, title in zip(axes, ("original domain", "target domain")):
        ax.set_title(title)
        ax.set_xlabel("epoch")
        ax.set_ylabel("CER")
        ax.grid(alpha=0.3)
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(rows: Sequence[dict], path) -> Path:
    labels = [str(r["method"]) for r in rows]
    org = [float(r["cer_org"]) for r in rows]
    tar = [float(r["cer_tar"]) for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.bar([i - 0.2 for i in x], org, width=0.4, label="org")
    ax.bar([i + 0.2 for i in x], tar, width=0.4, label="tar")
    ax.set_xticks(list(x), labels)
    ax.set_ylabel("final CER")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(rows: Sequence[dict], parameter: str, path) -> Path:
    vals = [float(r["value"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(vals, [float(r["cer_org"]) for r in rows], marker="o", label="org")
    ax.plot(vals, [float(r["cer_tar"]) for r in rows], marker="s", label="tar")
    ax.set_xlabel(parameter)
    ax.set_ylabel("final CER")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
