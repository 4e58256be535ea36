"""PNG figures for training logs and ablation summaries (headless, byte-stable)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .retrieval import METRIC_COLUMNS  # noqa: E402

# no timestamp or version chunk, so identical data gives identical bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(Path(path), format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_training(records, path, title="training"):
    """Per-step total loss (and image-query loss when logged) above dev MRR@10 per evaluation."""
    steps = [r["step"] for r in records if "step" in r]
    loss = [r["loss"] for r in records if "step" in r]
    comp = [(r["step"], r["l_comp"]) for r in records if "step" in r and r.get("l_comp") is not None]
    evals = [(r["eval_step"], r["mrr@10"]) for r in records if "eval_step" in r]

    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    top.plot(steps, loss, lw=0.8, label="total loss")
    if comp:
        top.plot(*zip(*comp), lw=0.8, alpha=0.7, label="image-query loss")
    top.set_ylabel("loss")
    top.legend(loc="upper right", fontsize=8)
    top.set_title(title)
    if evals:
        bottom.plot(*zip(*evals), marker="o", ms=3)
    bottom.set_xlabel("step")
    bottom.set_ylabel("dev mrr@10")
    fig.tight_layout()
    _save(fig, path)


def plot_ablation(summary, path, metrics=METRIC_COLUMNS):
    """Grouped bars of mean ± std per configuration and metric."""
    names = list(summary)
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, name in enumerate(names):
        xs = [j + i * width for j in range(len(metrics))]
        means = [100 * summary[name][m][0] for m in metrics]
        stds = [100 * summary[name][m][1] for m in metrics]
        stds = [0.0 if s != s else s for s in stds]
        ax.bar(xs, means, width, yerr=stds, capsize=2, label=name)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(metrics))])
    ax.set_xticklabels(metrics)
    ax.set_ylabel("score x100")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    _save(fig, path)
