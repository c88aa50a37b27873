"""Figures written next to the JSONL/CSV outputs of the CLI."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes reproducible across runs
_PNG_META = {"Software": None}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def _smooth(y, window):
    y = np.asarray(y, dtype=float)
    if window <= 1 or y.size < window:
        return y
    kernel = np.ones(window) / window
    return np.convolve(y, kernel, mode="valid")


def training_curves(runs: dict[str, list[dict]], path, window: int = 10) -> Path:
    """Mean reward, training clarification rate and uniform-reward fraction per iteration.

    ``runs`` maps a label (e.g. ``tiered``) to its metrics log.
    """
    keys = [("mean_reward", "mean reward"), ("train_clar_rate", "clarification rate"), ("uniform_frac", "uniform-reward fraction")]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for label, log in runs.items():
        if not log:
            continue
        for ax, (key, title) in zip(axes, keys):
            y = _smooth([r[key] for r in log], window)
            x = np.arange(len(y)) + min(window, len(log))
            ax.plot(x, y, label=label, lw=1.4)
            ax.set_title(title, fontsize=10)
            ax.set_xlabel("iteration")
    axes[0].legend(frameon=False, fontsize=8)
    for ax in axes:
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    return _finish(fig, path)


def eval_summary(report: dict, path) -> Path:
    labels, values = [], []
    for key, label in (
        ("accuracy_single", "single-pass"),
        ("accuracy_clar", "clar-enabled"),
        ("acc_on_requested_clar", "requested\n(honoured)"),
        ("acc_on_requested_denied", "requested\n(denied)"),
        ("clar_rate", "clar rate"),
    ):
        if report.get(key) is not None:
            labels.append(label)
            values.append(report[key])
    fig, ax = plt.subplots(figsize=(6, 3.4))
    bars = ax.bar(range(len(values)), values, color="0.55")
    if labels and labels[-1] == "clar rate":
        bars[-1].set_color("#b2432f")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylim(0, 1.05)
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return _finish(fig, path)


def gradient_check(entries: list[dict], path, z: float = 3.0) -> Path:
    """Exact gradient entries against Monte-Carlo estimates with z-sigma bars."""
    x = np.arange(len(entries))
    exact = [e["exact"] for e in entries]
    est = [e["estimate"] for e in entries]
    err = [z * e["stderr"] for e in entries]
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(entries) + 2), 3.4))
    ax.errorbar(x, est, yerr=err, fmt="o", ms=4, capsize=3, color="#2f5fb2", label=f"MC ± {z:g} se")
    ax.scatter(x, exact, marker="x", color="k", zorder=3, label="exact")
    ax.set_xticks(x)
    ax.set_xticklabels([f"{e['qtype']},{e['attr']}" for e in entries], fontsize=7)
    ax.set_xlabel("(question type, attribute)")
    ax.axhline(0, color="0.8", lw=0.8)
    ax.legend(frameon=False, fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return _finish(fig, path)
