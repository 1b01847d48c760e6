"""File formats: long-format response CSV, TOML config, fit artifacts."""

from __future__ import annotations

import csv
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np

from .data import HyperParams, ResponseDataset
from .engine import PosteriorSamples, SamplerConfig

DATA_HEADER = ["respondent", "item", "time", "response"]

HYPER_KEYS = {
    "len_scale_x", "len_scale_t", "var_slope", "var_intercept", "var_log_padding",
    "grid_min", "grid_max", "grid_points", "jitter", "time_kernel",
    "sparse_inducing_count", "knn_k", "sparse_threshold",
    "wiener_anchor_var", "wiener_diffusion_var", "global_thresholds",
}
SAMPLER_KEYS = {"chains", "burn_in", "iterations", "thin", "seed", "threads"}
SIM_KEYS = {
    "n_respondents", "n_items", "n_periods", "n_categories",
    "threshold_low", "threshold_high", "items_shared", "train_fraction",
}


class ConfigError(ValueError):
    pass


def write_dataset_csv(path, dataset: ResponseDataset) -> None:
    """One row per observation; respondent/item/time are 1-based in the file."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATA_HEADER)
        for i, j, t, y in zip(dataset.respondent, dataset.item,
                              dataset.period, dataset.response):
            w.writerow([i + 1, j + 1, t + 1, y])


def read_dataset_csv(path, items_shared: bool = False) -> ResponseDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        has_rows = bool(fh.readline().strip())
    if header != DATA_HEADER:
        raise ConfigError(f"expected header {','.join(DATA_HEADER)!r} in {path}")
    if not has_rows:
        raise ConfigError(f"no observations in {path}")
    rows = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.int64, ndmin=2)
    resp, item, time, y = rows[:, 0] - 1, rows[:, 1] - 1, rows[:, 2] - 1, rows[:, 3]
    n = int(resp.max()) + 1
    m = int(item.max()) + 1
    T = int(time.max()) + 1
    cats = np.zeros(m, dtype=np.int64)
    for j in range(m):
        mask = item == j
        cats[j] = int(y[mask].max()) if mask.any() else 2
    cats = np.maximum(cats, 2)
    return ResponseDataset(
        n_respondents=n, n_items=m, n_periods=T, categories_per_item=cats,
        respondent=resp, item=item, period=time, response=y,
        items_shared_across_time=items_shared,
    )


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    unknown = set(cfg) - HYPER_KEYS - SAMPLER_KEYS - SIM_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def hyper_from_config(cfg: dict, **overrides) -> HyperParams:
    kwargs = {k: v for k, v in cfg.items() if k in HYPER_KEYS}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return HyperParams(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def sampler_from_config(cfg: dict, **overrides) -> SamplerConfig:
    mapping = {"chains": "n_chains", "burn_in": "burn_in", "iterations": "n_iterations",
               "thin": "thin", "seed": "seed", "threads": "threads"}
    kwargs = {mapping[k]: v for k, v in cfg.items() if k in SAMPLER_KEYS}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SamplerConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def save_fit(out_dir, samples: PosteriorSamples) -> None:
    """Posterior draws (one compressed file per chain) plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = samples.config
    kept_iters = cfg.burn_in + np.arange(1, samples.n_kept + 1) * cfg.thin - 1
    for c in range(samples.n_chains):
        arrays = {
            "iterations": kept_iters,
            "traits": samples.traits[c],
            "irf_grid": samples.irf_grid[c],
            "slopes": samples.slopes[c],
            "intercepts": samples.intercepts[c],
        }
        for s, th in enumerate(samples.thresholds):
            arrays[f"thresholds_{s}"] = th[c]
        np.savez_compressed(out / f"posterior_chain{c}.npz", **arrays)
    meta = {
        "n_chains": samples.n_chains,
        "n_kept": samples.n_kept,
        "n_threshold_sets": len(samples.thresholds),
        "shared_items": samples.shared_items,
        "set_of_item": samples.set_of_item.tolist(),
        "categories_per_item": samples.categories_per_item.tolist(),
        "hyper": vars(samples.hyper) if not hasattr(samples.hyper, "__dataclass_fields__")
                 else {k: getattr(samples.hyper, k) for k in samples.hyper.__dataclass_fields__},
        "sampler": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
    }
    with open(out / "fit.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_fit(fit_dir) -> PosteriorSamples:
    fit = Path(fit_dir)
    with open(fit / "fit.json") as fh:
        meta = json.load(fh)
    hyper = HyperParams(**meta["hyper"])
    config = SamplerConfig(**meta["sampler"])
    traits, irf, slopes, intercepts = [], [], [], []
    thresholds = [[] for _ in range(meta["n_threshold_sets"])]
    for c in range(meta["n_chains"]):
        z = np.load(fit / f"posterior_chain{c}.npz")
        traits.append(z["traits"])
        irf.append(z["irf_grid"])
        slopes.append(z["slopes"])
        intercepts.append(z["intercepts"])
        for s in range(meta["n_threshold_sets"]):
            thresholds[s].append(z[f"thresholds_{s}"])
    from .engine import DenseGrid
    grid = DenseGrid.from_hyper(hyper)
    return PosteriorSamples(
        traits=np.stack(traits), irf_grid=np.stack(irf), slopes=np.stack(slopes),
        intercepts=np.stack(intercepts),
        thresholds=[np.stack(t) for t in thresholds],
        set_of_item=np.asarray(meta["set_of_item"], dtype=np.int64),
        categories_per_item=np.asarray(meta["categories_per_item"], dtype=np.int64),
        grid_nodes=grid.nodes, shared_items=meta["shared_items"],
        hyper=hyper, config=config,
    )


def write_trait_summary(path, samples: PosteriorSamples) -> None:
    mean = samples.traits.mean(axis=(0, 1))
    sd = samples.traits.reshape(-1, *mean.shape).std(axis=0, ddof=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["respondent", "time", "mean", "sd"])
        n, T = mean.shape
        for i in range(n):
            for t in range(T):
                w.writerow([i + 1, t + 1, f"{mean[i, t]:.6g}", f"{sd[i, t]:.6g}"])


def write_metrics_csv(path, rows) -> None:
    """rows: iterable of (variant, metric, value, std_error) tuples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "metric", "value", "std_error"])
        for variant, metric, value, se in rows:
            w.writerow([variant, metric, f"{value:.6g}", "" if se is None else f"{se:.6g}"])


def write_split_manifest(path, train_mask: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "set"])
        for r, is_train in enumerate(train_mask):
            w.writerow([r + 1, "train" if is_train else "test"])
