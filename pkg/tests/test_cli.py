import numpy as np
import pytest

from dynirt.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "sim.toml"
    cfg.write_text(
        "n_respondents = 8\nn_items = 3\nn_periods = 4\nn_categories = 3\nseed = 5\n"
    )
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "sim")]) == EXIT_OK
    assert main([
        "fit", "--data", str(root / "sim" / "data.csv"), "--out", str(root / "fit"),
        "--chains", "2", "--burnin", "10", "--iters", "20", "--thin", "2",
        "--seed", "0", "--no-timestamp",
    ]) == EXIT_OK
    return root


def test_simulate_outputs(workspace):
    sim = workspace / "sim"
    assert (sim / "data.csv").exists()
    assert (sim / "split.csv").exists()
    assert (sim / "truth_traits.csv").exists()
    assert (sim / "truth_icc.csv").exists()
    header = (sim / "data.csv").read_text().splitlines()[0]
    assert header == "respondent,item,time,response"


def test_fit_outputs(workspace):
    fit = workspace / "fit"
    assert (fit / "fit.json").exists()
    assert (fit / "posterior_chain0.npz").exists()
    assert (fit / "posterior_chain1.npz").exists()
    assert (fit / "trait_summary.csv").exists()
    assert (fit / "diagnostics.csv").exists()
    assert (fit / "trait_paths.png").exists()
    icc_csvs = list((fit / "icc").glob("icc_item*.csv"))
    icc_pngs = list((fit / "icc").glob("icc_item*.png"))
    assert len(icc_csvs) == 3 * 4
    assert len(icc_pngs) == 3  # one rendered figure per item


def test_fit_is_idempotent(workspace, tmp_path):
    args = [
        "fit", "--data", str(workspace / "sim" / "data.csv"),
        "--chains", "1", "--burnin", "4", "--iters", "8", "--thin", "2",
        "--seed", "3", "--no-timestamp",
    ]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out1)]) == EXIT_OK
    assert main(args + ["--out", str(out2)]) == EXIT_OK
    assert (out1 / "trait_summary.csv").read_bytes() == (out2 / "trait_summary.csv").read_bytes()
    assert (out1 / "diagnostics.txt").read_bytes() == (out2 / "diagnostics.txt").read_bytes()


def test_diagnose_and_strict_exit(workspace, tmp_path):
    out = tmp_path / "diag"
    assert main(["diagnose", "--fit", str(workspace / "fit"), "--out", str(out),
                 "--no-timestamp"]) == EXIT_OK
    assert (out / "diagnostics.csv").exists()
    # 20 kept iterations cannot be converged; strict mode must flag it
    assert main(["diagnose", "--fit", str(workspace / "fit"), "--out", str(out),
                 "--strict", "--no-timestamp"]) == EXIT_NUMERICAL


def test_predict_outputs(workspace, tmp_path):
    out = tmp_path / "pred"
    assert main(["predict", "--fit", str(workspace / "fit"),
                 "--data", str(workspace / "sim" / "data.csv"),
                 "--out", str(out)]) == EXIT_OK
    lines = (out / "metrics.csv").read_text().splitlines()
    metrics = {row.split(",")[1]: float(row.split(",")[2]) for row in lines[1:]}
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert metrics["mean_loglik"] < 0
    preds = (out / "predictions.csv").read_text().splitlines()
    assert len(preds) == 1 + 8 * 3 * 4


def test_forecast_outputs(workspace, tmp_path):
    out = tmp_path / "fc"
    assert main(["forecast", "--fit", str(workspace / "fit"),
                 "--data", str(workspace / "sim" / "data.csv"),
                 "--horizons", "5,6", "--out", str(out)]) == EXIT_OK
    lines = (out / "forecast_scores.csv").read_text().splitlines()
    assert lines[0] == "horizon,accuracy,mean_loglik,n_targets"
    assert len(lines) == 3


def test_forecast_rejects_in_sample_horizon(workspace, tmp_path):
    assert main(["forecast", "--fit", str(workspace / "fit"),
                 "--data", str(workspace / "sim" / "data.csv"),
                 "--horizons", "3", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_export_icc(workspace, tmp_path):
    out = tmp_path / "icc"
    assert main(["export-icc", "--fit", str(workspace / "fit"),
                 "--out", str(out)]) == EXIT_OK
    csvs = list(out.glob("icc_item*.csv"))
    assert len(csvs) == 12
    header = csvs[0].read_text().splitlines()[0]
    assert header == "x,icc_mean,icc_q05,icc_q95"


def test_validation_failure_exit_code(workspace, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("respondent,item,time,response\n1,1,1,9\n1,1,1,9\n")
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path / "out"),
                 "--chains", "1", "--burnin", "2", "--iters", "4", "--thin", "2",
                 ]) == EXIT_VALIDATION


def test_missing_file_exit_code(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "out")]) == EXIT_USAGE


def test_bad_config_exit_code(workspace, tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("unknown_flag = true\n")
    assert main(["fit", "--data", str(workspace / "sim" / "data.csv"),
                 "--config", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_USAGE


def test_usage_error_exit_code():
    assert main(["fit"]) == EXIT_USAGE  # missing required flags
    assert main(["no-such-command"]) == EXIT_USAGE
