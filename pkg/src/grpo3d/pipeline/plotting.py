"""Figures written next to the CSV/JSON reports. Headless (Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns produce identical files
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if len(y) < window or window < 2:
        return y
    kernel = np.ones(window) / window
    return np.convolve(y, kernel, mode="valid")


def plot_rl_curve(steps: Sequence[int], rewards: Sequence[float], kls: Sequence[float], path: Path) -> Path:
    steps, rewards, kls = map(np.asarray, (steps, rewards, kls))
    window = max(1, len(steps) // 20)
    fig, (ax_r, ax_k) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_r.plot(steps, rewards, color="0.8", lw=0.8, label="per step")
    sm = _smooth(rewards, window)
    ax_r.plot(steps[len(steps) - len(sm):], sm, color="C0", lw=1.6, label=f"moving mean ({window})")
    ax_r.set_xlabel("update step")
    ax_r.set_ylabel("mean group reward")
    ax_r.legend(loc="lower right", fontsize=8)
    ax_k.plot(steps, kls, color="C3", lw=1.0)
    ax_k.set_xlabel("update step")
    ax_k.set_ylabel("KL to reference")
    return _save(fig, path)


def plot_sft_loss(losses: Sequence[float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(np.arange(1, len(losses) + 1), losses, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    return _save(fig, path)


def plot_filter_counts(per_rule: Mapping[str, int], accepted: int, path: Path) -> Path:
    names = ["accepted", *per_rule]
    counts = [accepted, *per_rule.values()]
    fig, ax = plt.subplots(figsize=(7, 3.4))
    colors = ["C2"] + ["C3"] * len(per_rule)
    ax.bar(names, counts, color=colors)
    for i, c in enumerate(counts):
        ax.text(i, c, str(c), ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("records")
    ax.tick_params(axis="x", labelrotation=30)
    return _save(fig, path)


def plot_ablation(results: Mapping[str, Sequence[float]], path: Path, ylabel: str = "held-out exact match") -> Path:
    """Median bar with per-seed points for each configuration."""
    names = list(results)
    fig, ax = plt.subplots(figsize=(max(4.5, 1.0 * len(names) + 1.5), 3.6))
    for i, name in enumerate(names):
        vals = np.asarray(results[name], dtype=float)
        ax.bar(i, np.median(vals), color="C0", alpha=0.6)
        ax.scatter(np.full(len(vals), i), vals, color="k", s=10, zorder=3)
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 1.02)
    return _save(fig, path)
