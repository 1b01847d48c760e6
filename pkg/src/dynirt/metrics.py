"""Measurement-quality metrics and predictive scores."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .likelihood import extend_cuts, icc


def trait_correlation(est_means: np.ndarray, truth: np.ndarray) -> float:
    """Pearson correlation of flattened trait estimates against truth, with a
    global sign flip so the reported value is nonnegative (the latent scale is
    only identified up to reflection)."""
    a = np.asarray(est_means, dtype=float).ravel()
    b = np.asarray(truth, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("shape mismatch between estimates and truth")
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        raise ValueError("zero-variance input to trait_correlation")
    corr = float(np.corrcoef(a, b)[0, 1])
    return abs(corr)


def icc_from_samples(samples, j: int, t: int) -> np.ndarray:
    """Posterior-mean expected-response curve of one (item, period) on the grid."""
    s = samples.set_of_item[j]
    n_chains, n_kept = samples.n_chains, samples.n_kept
    acc = np.zeros(samples.grid_nodes.shape[0])
    for chain in range(n_chains):
        for k in range(n_kept):
            cuts = extend_cuts(samples.thresholds[s][chain, k])
            if samples.shared_items:
                f = samples.irf_grid[chain, k, j].astype(float)
            else:
                f = samples.irf_grid[chain, k, j, t].astype(float)
            acc += icc(f, cuts)
    return acc / (n_chains * n_kept)


def icc_rmse(est_icc_grids: np.ndarray, true_icc_grids: np.ndarray,
             trait_density_weights: np.ndarray) -> float:
    """Root-mean-square ICC error over grid nodes, weighted by the standard
    trait prior density and averaged over (item, period) blocks.

    ``est_icc_grids`` and ``true_icc_grids`` are (..., G) stacks over aligned
    grids; estimates must already be sign-aligned to the truth.
    """
    est = np.asarray(est_icc_grids, dtype=float)
    true = np.asarray(true_icc_grids, dtype=float)
    if est.shape != true.shape:
        raise ValueError("ICC grid shape mismatch")
    w = np.asarray(trait_density_weights, dtype=float)
    if w.shape[0] != est.shape[-1]:
        raise ValueError("weight vector does not match the grid")
    w = w / w.sum()
    sq = ((est - true) ** 2 * w).sum(axis=-1)
    return float(np.mean(np.sqrt(sq)))


def normal_grid_weights(grid_nodes: np.ndarray) -> np.ndarray:
    """Standard-normal density at each grid node (the trait prior measure)."""
    g = np.asarray(grid_nodes, dtype=float)
    return np.exp(-0.5 * g * g)


def _binary_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC of scores for the positive class."""
    pos = labels.astype(bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return np.nan
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def predictive_scores(probs: np.ndarray, true_responses: np.ndarray
                      ) -> tuple[float, float, float]:
    """(accuracy, mean log-likelihood, AUC) of predictive category distributions.

    ``probs`` is (N, C) with NaN padding allowed beyond each row's category
    count. Accuracy is the argmax hit rate; the log-likelihood averages the log
    predictive probability of the true category; AUC is the binary ROC area for
    two categories and otherwise a macro average over the ordinal splits
    y <= c vs y > c scored by the cumulative predicted probability.
    """
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(true_responses, dtype=np.int64)
    if y.size == 0:
        raise ValueError("empty target set")
    filled = np.where(np.isnan(probs), 0.0, probs)
    point = np.argmax(np.where(np.isnan(probs), -np.inf, probs), axis=1) + 1
    accuracy = float(np.mean(point == y))
    p_true = filled[np.arange(y.shape[0]), y - 1]
    mean_ll = float(np.mean(np.log(np.maximum(p_true, 1e-300))))

    n_cats = int(np.max(np.sum(~np.isnan(probs), axis=1)))
    cum = np.cumsum(filled, axis=1)
    aucs = []
    for c in range(1, n_cats):
        labels = y <= c
        auc_c = _binary_auc(labels, cum[:, c - 1])
        if not np.isnan(auc_c):
            aucs.append(auc_c)
    auc = float(np.mean(aucs)) if aucs else np.nan
    return accuracy, mean_ll, auc
