"""Synthetic data generation: smooth trait trajectories, GP item response
functions around affine trends, uniform sorted thresholds, probit responses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GroundTruth, ResponseDataset
from .engine import DenseGrid
from .kernels import KernelSpec, kernel_matrix, stable_cholesky
from .likelihood import all_category_probs, extend_cuts


@dataclass(frozen=True)
class SimConfig:
    n_respondents: int = 100
    n_items: int = 10
    n_periods: int = 10
    n_categories: int = 5
    len_scale_t: float = 5.0
    len_scale_x: float = 1.0
    var_slope: float = 1.0
    var_intercept: float = 1.0
    threshold_low: float = -2.0
    threshold_high: float = 2.0
    items_shared: bool = False
    time_kernel: str = "matern52"
    wiener_anchor_var: float = 1.0
    wiener_diffusion_var: float = 0.25
    grid_min: float = -5.0
    grid_max: float = 5.0
    grid_points: int = 500
    jitter: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_categories < 2:
            raise ValueError("need at least 2 categories")
        if self.threshold_low >= self.threshold_high:
            raise ValueError("threshold_low must be below threshold_high")


def _draw_sorted_thresholds(rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
    # Sorting guarantees non-zero mass for every category under the probit
    # link; near-ties are redrawn for numerical hygiene.
    while True:
        b = np.sort(rng.uniform(cfg.threshold_low, cfg.threshold_high,
                                size=cfg.n_categories - 1))
        if cfg.n_categories == 2 or np.min(np.diff(b)) > 1e-6:
            return b


def generate(cfg: SimConfig) -> tuple[ResponseDataset, GroundTruth]:
    """Complete (no missing cells) response tensor plus the generating truth.

    Trait trajectories are i.i.d. draws from the zero-mean time-kernel GP,
    item functions are GP draws around item-specific affine trends evaluated on
    the dense grid, and thresholds are per-item sorted uniforms held constant
    over time. Responses are generated from the function value at the grid node
    nearest each true trait (negligible at the default grid resolution).
    """
    rng = np.random.default_rng(cfg.seed)
    n, m, T, C = cfg.n_respondents, cfg.n_items, cfg.n_periods, cfg.n_categories
    grid = DenseGrid(np.linspace(cfg.grid_min, cfg.grid_max, cfg.grid_points))

    if cfg.time_kernel == "matern52":
        tspec = KernelSpec("matern52", length_scale=cfg.len_scale_t, jitter=cfg.jitter)
    elif cfg.time_kernel == "wiener":
        tspec = KernelSpec("wiener", anchor_var=cfg.wiener_anchor_var,
                           diffusion_var=cfg.wiener_diffusion_var, jitter=cfg.jitter)
    else:
        tspec = KernelSpec("static", jitter=cfg.jitter)
    periods = np.arange(1, T + 1)
    K_t = kernel_matrix(periods, periods, tspec) + cfg.jitter * np.eye(T)
    L_t = stable_cholesky(K_t, cfg.jitter)
    traits = (L_t @ rng.standard_normal((T, n))).T  # (n, T)

    xspec = KernelSpec("rbf", length_scale=cfg.len_scale_x, jitter=cfg.jitter)
    K_g = kernel_matrix(grid.nodes, grid.nodes, xspec) + cfg.jitter * np.eye(cfg.grid_points)
    L_g = stable_cholesky(K_g, cfg.jitter)

    irf = np.empty((m, T, cfg.grid_points))
    if cfg.items_shared:
        for j in range(m):
            slope = rng.normal(0.0, np.sqrt(cfg.var_slope))
            intercept = rng.normal(0.0, np.sqrt(cfg.var_intercept))
            f = intercept + slope * grid.nodes + L_g @ rng.standard_normal(cfg.grid_points)
            irf[j, :] = f
    else:
        for j in range(m):
            for t in range(T):
                slope = rng.normal(0.0, np.sqrt(cfg.var_slope))
                intercept = rng.normal(0.0, np.sqrt(cfg.var_intercept))
                irf[j, t] = (intercept + slope * grid.nodes
                             + L_g @ rng.standard_normal(cfg.grid_points))

    thresholds = np.empty((m, T, C - 1))
    for j in range(m):
        b = _draw_sorted_thresholds(rng, cfg)
        thresholds[j, :] = b

    node_idx = grid.node_index(traits)  # (n, T)
    resp_i = np.repeat(np.arange(n), m * T)
    item_j = np.tile(np.repeat(np.arange(m), T), n)
    time_t = np.tile(np.arange(T), n * m)
    f_obs = irf[item_j, time_t, node_idx[resp_i, time_t]]
    y = np.empty(n * m * T, dtype=np.int64)
    for j in range(m):
        mask = item_j == j
        cuts = extend_cuts(thresholds[j, 0])
        probs = all_category_probs(f_obs[mask], cuts)
        u = rng.random(int(mask.sum()))
        y[mask] = 1 + (u[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)

    dataset = ResponseDataset(
        n_respondents=n, n_items=m, n_periods=T,
        categories_per_item=np.full(m, C, dtype=np.int64),
        respondent=resp_i, item=item_j, period=time_t, response=y,
        items_shared_across_time=cfg.items_shared,
    )
    truth = GroundTruth(true_traits=traits, true_irf_grid=irf, true_thresholds=thresholds)
    return dataset, truth


def train_test_split(dataset: ResponseDataset, fraction: float, seed: int
                     ) -> tuple[ResponseDataset, ResponseDataset]:
    """Uniform random partition of observations into train (``fraction``) and test."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n_obs = dataset.n_observations
    n_train = int(round(fraction * n_obs))
    perm = rng.permutation(n_obs)
    mask = np.zeros(n_obs, dtype=bool)
    mask[perm[:n_train]] = True
    return dataset.subset(mask), dataset.subset(~mask)
