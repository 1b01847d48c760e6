"""Figure rendering for fitted models (saved to files, no interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_icc(nodes: np.ndarray, mean: np.ndarray, q05: np.ndarray, q95: np.ndarray,
             title: str, path) -> None:
    """One expected-response curve with its 90% posterior band."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.fill_between(nodes, q05, q95, alpha=0.25, lw=0)
    ax.plot(nodes, mean, lw=1.5)
    ax.set_xlabel("latent trait")
    ax.set_ylabel("expected response")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_trait_paths(mean: np.ndarray, sd: np.ndarray, path, max_respondents: int = 20) -> None:
    """Posterior-mean trait trajectories (first ``max_respondents`` shown)."""
    n, T = mean.shape
    periods = np.arange(1, T + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    for i in range(min(n, max_respondents)):
        ax.plot(periods, mean[i], lw=1, alpha=0.8)
    ax.set_xlabel("time period")
    ax.set_ylabel("posterior mean trait")
    ax.set_title("trait trajectories")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
