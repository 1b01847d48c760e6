"""Ordered-probit category likelihood, threshold reconstruction, and ICCs.

Category c has probability Phi(b_c - f) - Phi(b_{c-1} - f) with b_0 = -inf and
b_C = +inf. Log-probabilities are computed through log-CDF differences with a
complementary branch when both shifted cutpoints are positive, so the sampler
can evaluate likelihoods far out on the ellipse without catastrophic
cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri


@dataclass(frozen=True)
class ThresholdSet:
    """Free cutpoint b_1 plus log positive paddings for b_2..b_{C-1}."""

    b1: float
    log_paddings: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "log_paddings", np.asarray(self.log_paddings, dtype=float))

    @property
    def n_categories(self) -> int:
        return self.log_paddings.shape[0] + 2


def reconstruct_thresholds(ts: ThresholdSet, n_categories: int) -> np.ndarray:
    """Extended cutpoint vector [-inf, b_1, ..., b_{C-1}, +inf], length C + 1.

    b_c = b_1 + sum_{l=2}^{c} exp(log_padding_l); strictly increasing for any
    finite inputs because every padding is positive.
    """
    if n_categories < 2:
        raise ValueError("need at least 2 categories")
    if ts.log_paddings.shape[0] != n_categories - 2:
        raise ValueError(
            f"expected {n_categories - 2} log paddings, got {ts.log_paddings.shape[0]}"
        )
    cuts = np.empty(n_categories + 1)
    cuts[0] = -np.inf
    cuts[1] = ts.b1
    if n_categories > 2:
        cuts[2:-1] = ts.b1 + np.cumsum(np.exp(ts.log_paddings))
    cuts[-1] = np.inf
    return cuts


def cuts_from_free(free: np.ndarray) -> np.ndarray:
    """Finite cutpoints (length C-1) from the unconstrained (b1, log paddings) vector."""
    out = np.empty(free.shape[0])
    out[0] = free[0]
    if free.shape[0] > 1:
        out[1:] = free[0] + np.cumsum(np.exp(free[1:]))
    return out


def extend_cuts(finite_cuts: np.ndarray) -> np.ndarray:
    """Pad finite cutpoints with the fixed -inf / +inf endpoints."""
    return np.concatenate(([-np.inf], np.asarray(finite_cuts, dtype=float), [np.inf]))


def log_phi_interval(lo, hi):
    """log(Phi(hi) - Phi(lo)) elementwise, stable for |lo|, |hi| up to ~30.

    Requires lo < hi elementwise; endpoints may be infinite.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    scalar = lo.ndim == 0 and hi.ndim == 0
    if scalar:
        lo = lo.reshape(1)
        hi = hi.reshape(1)
    # Reflect when the interval sits in the right tail: Phi(hi)-Phi(lo) =
    # Phi(-lo)-Phi(-hi), which keeps both CDF values well scaled.
    flip = lo > 0
    a = np.where(flip, -lo, hi)
    b = np.where(flip, -hi, lo)
    pa = ndtr(a)
    p = pa - ndtr(b)
    with np.errstate(divide="ignore"):
        out = np.log(p)
    # Direct differencing cancels when the interval holds a sliver of the
    # tail mass; redo those entries through log-CDFs.
    risky = p <= pa * 1e-3
    if np.any(risky):
        log_a = log_ndtr(a[risky])
        with np.errstate(divide="ignore"):
            out[risky] = log_a + np.log1p(-np.exp(log_ndtr(b[risky]) - log_a))
    return out[0] if scalar else out


def truncated_standard_normal(lo, hi, rng) -> np.ndarray:
    """Draws from N(0, 1) truncated to [lo, hi] elementwise via CDF inversion.

    Intervals in the right tail are reflected onto the left tail, where the
    normal CDF keeps full relative precision down to denormals, so the
    inversion stays accurate even when the interval mass is around 1e-300.
    Requires lo < hi elementwise; endpoints may be infinite.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    pa = ndtr(a)
    pb = ndtr(b)
    u = rng.random(np.broadcast_shapes(lo.shape, hi.shape))
    p = pa + u * (pb - pa)
    # ndtri(0) is -inf; the interval has positive mass, so nudge to the
    # smallest representable probability and clamp back into the interval.
    z = ndtri(np.maximum(p, np.finfo(float).tiny))
    z = np.clip(z, a, b)
    return np.where(flip, -z, z)


def ordinal_logpdf(f, y, cuts: np.ndarray):
    """Vectorized log p(y | f) for extended cutpoints ``cuts`` (length C + 1)."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    return log_phi_interval(cuts[y - 1] - f, cuts[y] - f)


def category_logprob(f: float, cuts: np.ndarray, c: int) -> float:
    """log p(y = c | f) under the ordered-probit likelihood."""
    if not np.isfinite(f):
        raise ValueError("f must be finite")
    n_categories = cuts.shape[0] - 1
    if not 1 <= c <= n_categories:
        raise ValueError(f"category {c} outside 1..{n_categories}")
    return float(log_phi_interval(cuts[c - 1] - f, cuts[c] - f))


def all_category_probs(f, cuts: np.ndarray) -> np.ndarray:
    """Probabilities of every category at latent value(s) f; last axis length C."""
    f = np.asarray(f, dtype=float)
    n_categories = cuts.shape[0] - 1
    out = np.empty(f.shape + (n_categories,))
    for c in range(1, n_categories + 1):
        out[..., c - 1] = np.exp(log_phi_interval(cuts[c - 1] - f, cuts[c] - f))
    return out


def icc(f, cuts: np.ndarray):
    """Expected response E[y | f] = sum_c c * p(y = c | f); values lie in [1, C]."""
    probs = all_category_probs(f, cuts)
    cats = np.arange(1, cuts.shape[0])
    return probs @ cats


def loglik_item_block(f_vec, y_col, cuts: np.ndarray) -> float:
    """Summed log-likelihood of one (item, period) block; empty block gives 0."""
    f_vec = np.asarray(f_vec, dtype=float)
    y_col = np.asarray(y_col, dtype=np.int64)
    if y_col.size == 0:
        return 0.0
    return float(ordinal_logpdf(f_vec, y_col, cuts).sum())


def loglik_trait_path(x_path, grid_nodes, irf_grids, cuts_per_obs_lo, cuts_per_obs_hi,
                      obs_block, obs_period, obs_response) -> float:
    """Log-likelihood of one respondent's trait path against grid-held IRFs.

    ``irf_grids`` has shape (blocks, G) holding the dense-grid function values
    for every (item, period) block this respondent is observed in;
    ``cuts_per_obs_lo``/``hi`` are the lower/upper shifted cutpoints b_{y-1},
    b_y already gathered per observation. Each x entry is looked up at the
    nearest grid node.
    """
    x_path = np.asarray(x_path, dtype=float)
    if obs_block.size == 0:
        return 0.0
    spacing = grid_nodes[1] - grid_nodes[0]
    idx = np.clip(
        np.rint((x_path[obs_period] - grid_nodes[0]) / spacing).astype(np.int64),
        0,
        grid_nodes.shape[0] - 1,
    )
    f = irf_grids[obs_block, idx]
    return float(log_phi_interval(cuts_per_obs_lo - f, cuts_per_obs_hi - f).sum())
