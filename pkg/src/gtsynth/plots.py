"""Figure rendering for the report and optimization paths."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.stats import norm

__all__ = ["fig_marginals", "fig_cov_error", "fig_pi_curve"]


def fig_marginals(pooled: np.ndarray, node_ids, path) -> None:
    """Per-node histograms of pooled slots against the standard normal pdf."""
    n = len(node_ids)
    ncols = min(n, 4)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows),
                             squeeze=False)
    grid = np.linspace(-4, 4, 200)
    for i, node in enumerate(node_ids):
        ax = axes[i // ncols][i % ncols]
        ax.hist(pooled[:, i], bins=60, density=True, alpha=0.6, color="C0")
        ax.plot(grid, norm.pdf(grid), "k-", lw=1)
        ax.set_title(node, fontsize=9)
        ax.set_xlim(-4, 4)
    for j in range(n, nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_cov_error(emp: np.ndarray, target: np.ndarray, node_ids, path) -> None:
    """Heatmap of absolute covariance error against the prescribed matrix."""
    err = np.abs(emp - target)
    fig, ax = plt.subplots(figsize=(4.5, 3.8))
    im = ax.imshow(err, cmap="viridis")
    ax.set_xticks(range(len(node_ids)))
    ax.set_yticks(range(len(node_ids)))
    ax.set_xticklabels(node_ids, rotation=90, fontsize=7)
    ax.set_yticklabels(node_ids, fontsize=7)
    fig.colorbar(im, ax=ax, label="|empirical - target|")
    ax.set_title("covariance error", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_pi_curve(curve, path, bits: bool = False) -> None:
    """Objective curve of the sign-parameter grid search with CI bars."""
    scale = 1.0 / np.log(2.0) if bits else 1.0
    p = [row[0] for row in curve]
    est = [row[1] * scale for row in curve]
    ci = [row[2] * scale for row in curve]
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.errorbar(p, est, yerr=ci, fmt="o-", ms=3, lw=1, capsize=2)
    ax.axvline(0.5, color="gray", ls="--", lw=1)
    ax.set_xlabel("sign parameter p")
    ax.set_ylabel("Y-rate bound " + ("(bits)" if bits else "(nats)"))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
