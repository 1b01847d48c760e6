"""Dataset, hyperparameter, and ground-truth containers shared across the engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TIME_KERNELS = ("matern52", "wiener", "static")


class DataValidationError(ValueError):
    """Raised when a dataset fails validation at an API boundary."""


@dataclass(frozen=True)
class ResponseDataset:
    """Long-format ordinal responses y[i, j, t] with per-item category counts.

    Indices are 0-based internally; ``respondent``/``item``/``period`` arrays are
    aligned with ``response`` (1-based category labels). Missing (i, j, t)
    triples are simply absent and contribute nothing to the likelihood.
    """

    n_respondents: int
    n_items: int
    n_periods: int
    categories_per_item: np.ndarray  # (m,) ints, each >= 2
    respondent: np.ndarray  # (N,) int, 0..n-1
    item: np.ndarray  # (N,) int, 0..m-1
    period: np.ndarray  # (N,) int, 0..T-1
    response: np.ndarray  # (N,) int, 1..C_j
    items_shared_across_time: bool = False

    def __post_init__(self):
        for name in ("categories_per_item", "respondent", "item", "period", "response"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    @property
    def n_observations(self) -> int:
        return self.response.shape[0]

    def subset(self, mask: np.ndarray) -> "ResponseDataset":
        """New dataset keeping only the observations selected by a boolean mask."""
        return ResponseDataset(
            n_respondents=self.n_respondents,
            n_items=self.n_items,
            n_periods=self.n_periods,
            categories_per_item=self.categories_per_item,
            respondent=self.respondent[mask],
            item=self.item[mask],
            period=self.period[mask],
            response=self.response[mask],
            items_shared_across_time=self.items_shared_across_time,
        )

    def __eq__(self, other):
        if not isinstance(other, ResponseDataset):
            return NotImplemented
        return (
            self.n_respondents == other.n_respondents
            and self.n_items == other.n_items
            and self.n_periods == other.n_periods
            and self.items_shared_across_time == other.items_shared_across_time
            and np.array_equal(self.categories_per_item, other.categories_per_item)
            and np.array_equal(self.respondent, other.respondent)
            and np.array_equal(self.item, other.item)
            and np.array_equal(self.period, other.period)
            and np.array_equal(self.response, other.response)
        )


@dataclass(frozen=True)
class HyperParams:
    """Fixed model hyperparameters (length scales are config inputs, never learned)."""

    len_scale_x: float = 1.0
    len_scale_t: float = 5.0
    var_slope: float = 1.0
    var_intercept: float = 1.0
    var_log_padding: float = 1.0
    grid_min: float = -5.0
    grid_max: float = 5.0
    grid_points: int = 500
    jitter: float = 1e-6
    time_kernel: str = "matern52"
    sparse_inducing_count: int = 100
    knn_k: int = 4
    sparse_threshold: int = 2000
    wiener_anchor_var: float = 1.0
    wiener_diffusion_var: float = 0.25
    global_thresholds: bool = False

    def __post_init__(self):
        if self.grid_min >= self.grid_max:
            raise ValueError("grid_min must be below grid_max")
        if self.grid_points < 2:
            raise ValueError("grid_points must be at least 2")
        for name in ("len_scale_x", "len_scale_t", "var_slope", "var_intercept",
                     "var_log_padding", "jitter", "wiener_anchor_var",
                     "wiener_diffusion_var"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.time_kernel not in TIME_KERNELS:
            raise ValueError(f"time_kernel must be one of {TIME_KERNELS}")


@dataclass(frozen=True)
class GroundTruth:
    """Simulator truth paired with a ResponseDataset, for metric computation."""

    true_traits: np.ndarray  # (n, T)
    true_irf_grid: np.ndarray  # (m, T, G) latent function values on the dense grid
    true_thresholds: np.ndarray  # (m, T, C-1) finite cutpoints


def validate_dataset(dataset: ResponseDataset) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    report: list[str] = []
    d = dataset
    if np.any(d.categories_per_item < 2):
        report.append("categories_per_item contains a count below 2")
    if d.respondent.size:
        if d.respondent.min() < 0 or d.respondent.max() >= d.n_respondents:
            report.append("respondent index out of range")
        if d.item.min() < 0 or d.item.max() >= d.n_items:
            report.append("item index out of range")
        if d.period.min() < 0 or d.period.max() >= d.n_periods:
            report.append("period index out of range")
    in_range = (d.item >= 0) & (d.item < d.n_items)
    if in_range.any():
        cj = d.categories_per_item[d.item[in_range]]
        y = d.response[in_range]
        bad = np.nonzero((y < 1) | (y > cj))[0]
        for k in np.nonzero(in_range)[0][bad]:
            report.append(
                f"response {d.response[k]} out of range for item {d.item[k]} "
                f"(C={d.categories_per_item[d.item[k]]}) at row {k}"
            )
    triples = np.stack([d.respondent, d.item, d.period], axis=1)
    if triples.shape[0]:
        _, counts = np.unique(triples, axis=0, return_counts=True)
        n_dup = int(np.sum(counts > 1))
        if n_dup:
            report.append(f"{n_dup} duplicated (respondent, item, period) triples")
    observed_items = np.unique(d.item[(d.item >= 0) & (d.item < d.n_items)])
    if observed_items.size < d.n_items:
        missing = sorted(set(range(d.n_items)) - set(observed_items.tolist()))
        report.append(f"items with no observations: {missing}")
    observed_periods = np.unique(d.period[(d.period >= 0) & (d.period < d.n_periods)])
    if observed_periods.size < d.n_periods:
        missing = sorted(set(range(d.n_periods)) - set(observed_periods.tolist()))
        report.append(f"periods with no observations: {missing}")
    return report
