"""Command-line entry points: simulate | fit | diagnose | predict | forecast | export-icc."""

from __future__ import annotations

import argparse
import csv
import sys
import time as _time
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .data import HyperParams, validate_dataset
from .engine import (
    align_signs,
    forecast_responses,
    predict_responses,
    run,
)
from .io import (
    ConfigError,
    hyper_from_config,
    load_config,
    load_fit,
    read_dataset_csv,
    sampler_from_config,
    save_fit,
    write_dataset_csv,
    write_metrics_csv,
    write_split_manifest,
    write_trait_summary,
)
from .kernels import NumericalError
from .likelihood import extend_cuts, icc
from .metrics import predictive_scores
from .plots import plot_trait_paths
from .simulate import SimConfig, generate, train_test_split

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _add_common_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--burnin", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--time-kernel", choices=["matern52", "wiener", "static"], default=None)
    p.add_argument("--shared-items", action="store_true")
    p.add_argument("--sparse-threshold", type=int, default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynirt",
        description="Dynamic Gaussian-process IRT for longitudinal ordinal responses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    p.add_argument("--config", required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("fit", help="run the MCMC sampler on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero if any monitored R-hat is 1.1 or above")
    p.add_argument("--no-timestamp", action="store_true")
    _add_common_sampler_flags(p)

    p = sub.add_parser("diagnose", help="recompute convergence diagnostics for a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=False)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--no-timestamp", action="store_true")

    p = sub.add_parser("predict", help="posterior-predictive scores for held-out data")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("forecast", help="extrapolate traits and score future responses")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizons", required=True,
                   help="comma-separated 1-based future periods, each beyond the fit")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-icc", help="write plottable ICC curves per (item, period)")
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True)
    return parser


def _load_cfg(path) -> dict:
    if path is None:
        return {}
    return load_config(path)


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args.config)
    sim_kwargs = {}
    key_map = {
        "n_respondents": "n_respondents", "n_items": "n_items",
        "n_periods": "n_periods", "n_categories": "n_categories",
        "threshold_low": "threshold_low", "threshold_high": "threshold_high",
        "items_shared": "items_shared", "len_scale_x": "len_scale_x",
        "len_scale_t": "len_scale_t", "var_slope": "var_slope",
        "var_intercept": "var_intercept", "time_kernel": "time_kernel",
        "grid_min": "grid_min", "grid_max": "grid_max", "grid_points": "grid_points",
        "jitter": "jitter", "seed": "seed",
        "wiener_anchor_var": "wiener_anchor_var",
        "wiener_diffusion_var": "wiener_diffusion_var",
    }
    for key, field in key_map.items():
        if key in cfg:
            sim_kwargs[field] = cfg[key]
    if args.seed is not None:
        sim_kwargs["seed"] = args.seed
    try:
        sim = SimConfig(**sim_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, truth = generate(sim)
    write_dataset_csv(out / "data.csv", dataset)

    fraction = float(cfg.get("train_fraction", 0.8))
    rng = np.random.default_rng(sim.seed)
    n_train = int(round(fraction * dataset.n_observations))
    perm = rng.permutation(dataset.n_observations)
    train_mask = np.zeros(dataset.n_observations, dtype=bool)
    train_mask[perm[:n_train]] = True
    write_split_manifest(out / "split.csv", train_mask)

    with open(out / "truth_traits.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["respondent", "time", "trait"])
        n, T = truth.true_traits.shape
        for i in range(n):
            for t in range(T):
                w.writerow([i + 1, t + 1, f"{truth.true_traits[i, t]:.6g}"])

    nodes = np.linspace(sim.grid_min, sim.grid_max, sim.grid_points)
    with open(out / "truth_icc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "time", "x", "icc"])
        m, T, _ = truth.true_irf_grid.shape
        for j in range(m):
            cuts = extend_cuts(truth.true_thresholds[j, 0])
            for t in range(T):
                curve = icc(truth.true_irf_grid[j, t], cuts)
                for g in range(nodes.shape[0]):
                    w.writerow([j + 1, t + 1, f"{nodes[g]:.6g}", f"{curve[g]:.6g}"])
    return EXIT_OK


def _monitored_chains(samples):
    """Scalar chain stacks for the monitored blocks: all traits, plus dense-grid
    function values at a ten-node grid subset for every block."""
    ch, K = samples.n_chains, samples.n_kept
    x = samples.traits.reshape(ch, K, -1)
    G = samples.grid_nodes.shape[0]
    step = max(G // 10, 1)
    sub = samples.irf_grid[..., ::step]
    f = sub.reshape(ch, K, -1).astype(float)
    return {"traits": x, "irf_grid": f}


def _write_diagnostics(samples, out_dir, no_timestamp: bool):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blocks = _monitored_chains(samples)
    rows = []
    worst = 0.0
    for name, arr in blocks.items():
        summary = diag.summarize(arr)
        worst = max(worst, summary["max_rhat"])
        rows.append((name, summary))
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "max_rhat", "min_ess", "mean_rhat", "mean_ess"])
        for name, s in rows:
            w.writerow([name, f"{s['max_rhat']:.4f}", f"{s['min_ess']:.1f}",
                        f"{s['mean_rhat']:.4f}", f"{s['mean_ess']:.1f}"])
    with open(out / "diagnostics.txt", "w") as fh:
        if not no_timestamp:
            fh.write(f"generated: {_time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        for name, s in rows:
            flag = "  [R-HAT >= 1.1]" if s["max_rhat"] >= 1.1 else ""
            fh.write(f"{name}: max R-hat {s['max_rhat']:.4f}, "
                     f"min ESS {s['min_ess']:.1f}{flag}\n")
    return worst


def _export_icc(samples, out_dir, render: bool = True) -> None:
    from .plots import plot_icc

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ch, K = samples.n_chains, samples.n_kept
    nodes = samples.grid_nodes
    m = samples.categories_per_item.shape[0]
    periods = 1 if samples.shared_items else samples.traits.shape[3]
    for j in range(m):
        s = samples.set_of_item[j]
        for t in range(periods):
            curves = np.empty((ch * K, nodes.shape[0]))
            idx = 0
            for c in range(ch):
                for k in range(K):
                    cuts = extend_cuts(samples.thresholds[s][c, k])
                    f = (samples.irf_grid[c, k, j] if samples.shared_items
                         else samples.irf_grid[c, k, j, t]).astype(float)
                    curves[idx] = icc(f, cuts)
                    idx += 1
            mean = curves.mean(axis=0)
            q05 = np.quantile(curves, 0.05, axis=0)
            q95 = np.quantile(curves, 0.95, axis=0)
            stem = f"icc_item{j + 1}" if samples.shared_items \
                else f"icc_item{j + 1}_time{t + 1}"
            with open(out / f"{stem}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "icc_mean", "icc_q05", "icc_q95"])
                for g in range(nodes.shape[0]):
                    w.writerow([f"{nodes[g]:.6g}", f"{mean[g]:.6g}",
                                f"{q05[g]:.6g}", f"{q95[g]:.6g}"])
            if render and t == periods - 1:
                title = f"item {j + 1}" if samples.shared_items \
                    else f"item {j + 1}, period {t + 1}"
                plot_icc(nodes, mean, q05, q95, title, out / f"{stem}.png")


def cmd_fit(args) -> int:
    cfg = _load_cfg(args.config)
    hyper = hyper_from_config(
        cfg,
        time_kernel=args.time_kernel,
        sparse_threshold=args.sparse_threshold,
    )
    sampler = sampler_from_config(
        cfg,
        seed=args.seed, n_chains=args.chains, burn_in=args.burnin,
        n_iterations=args.iters, thin=args.thin, threads=args.threads,
    )
    dataset = read_dataset_csv(args.data, items_shared=args.shared_items)
    problems = validate_dataset(dataset)
    if problems:
        for p in problems:
            print(f"validation: {p}", file=sys.stderr)
        return EXIT_VALIDATION

    samples = align_signs(run(dataset, hyper, sampler))
    out = Path(args.out)
    save_fit(out, samples)
    write_trait_summary(out / "trait_summary.csv", samples)
    mean = samples.traits.mean(axis=(0, 1))
    sd = samples.traits.reshape(-1, *mean.shape).std(axis=0, ddof=1)
    plot_trait_paths(mean, sd, out / "trait_paths.png")
    _export_icc(samples, out / "icc")
    worst = _write_diagnostics(samples, out, args.no_timestamp)
    if args.strict and worst >= 1.1:
        print(f"strict mode: max R-hat {worst:.4f} >= 1.1", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_diagnose(args) -> int:
    samples = load_fit(args.fit)
    out = args.out if args.out else args.fit
    worst = _write_diagnostics(samples, out, args.no_timestamp)
    if args.strict and worst >= 1.1:
        print(f"strict mode: max R-hat {worst:.4f} >= 1.1", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_predict(args) -> int:
    samples = load_fit(args.fit)
    held = read_dataset_csv(args.data, items_shared=samples.shared_items)
    targets = np.stack([held.respondent, held.item, held.period], axis=1)
    probs, point, _ = predict_responses(samples, targets, true_responses=held.response)
    acc, mean_ll, auc = predictive_scores(probs, held.response)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        max_c = probs.shape[1]
        w.writerow(["respondent", "item", "time", "response", "predicted"]
                   + [f"p{c + 1}" for c in range(max_c)])
        for r in range(targets.shape[0]):
            w.writerow(
                [targets[r, 0] + 1, targets[r, 1] + 1, targets[r, 2] + 1,
                 held.response[r], point[r]]
                + [("" if np.isnan(p) else f"{p:.6g}") for p in probs[r]]
            )
    write_metrics_csv(out / "metrics.csv", [
        ("fit", "accuracy", acc, None),
        ("fit", "mean_loglik", mean_ll, None),
        ("fit", "auc", auc, None),
    ])
    return EXIT_OK


def cmd_forecast(args) -> int:
    samples = load_fit(args.fit)
    held = read_dataset_csv(args.data, items_shared=samples.shared_items)
    try:
        horizons = [int(h) for h in args.horizons.split(",")]
    except ValueError:
        raise ConfigError(f"bad horizons {args.horizons!r}") from None
    T = samples.traits.shape[3]
    for h in horizons:
        if h <= T:
            raise ConfigError(f"horizon {h} must exceed the fitted period count {T}")
    fc = forecast_responses(samples, horizons)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for h in horizons:
        mask = held.period == h - 1
        if not mask.any():
            rows.append((h, np.nan, np.nan, 0))
            continue
        probs_all = fc[h]  # (n, m, max_C)
        probs = probs_all[held.respondent[mask], held.item[mask]]
        acc, mean_ll, _ = predictive_scores(probs, held.response[mask])
        rows.append((h, acc, mean_ll, int(mask.sum())))
    with open(out / "forecast_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "accuracy", "mean_loglik", "n_targets"])
        for h, acc, ll, n in rows:
            w.writerow([h, f"{acc:.6g}", f"{ll:.6g}", n])
    return EXIT_OK


def cmd_export_icc(args) -> int:
    samples = load_fit(args.fit)
    _export_icc(samples, args.out)
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "predict": cmd_predict,
    "forecast": cmd_forecast,
    "export-icc": cmd_export_icc,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
