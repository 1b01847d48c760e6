import numpy as np
import pytest

from dynirt.data import HyperParams
from dynirt.engine import SamplerConfig, run
from dynirt.io import (
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
from dynirt.simulate import SimConfig, generate


def test_dataset_csv_roundtrip(tmp_path):
    ds, _ = generate(SimConfig(n_respondents=6, n_items=3, n_periods=4,
                               n_categories=3, seed=0))
    path = tmp_path / "data.csv"
    write_dataset_csv(path, ds)
    back = read_dataset_csv(path)
    assert back == ds
    first = path.read_text().splitlines()
    assert first[0] == "respondent,item,time,response"
    # 1-based external indices
    cols = np.array([line.split(",") for line in first[1:]], dtype=int)
    assert cols[:, :3].min() == 1


def test_read_dataset_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c,d\n1,1,1,1\n")
    with pytest.raises(ConfigError):
        read_dataset_csv(p)


def test_read_dataset_csv_rejects_empty(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("respondent,item,time,response\n")
    with pytest.raises(ConfigError):
        read_dataset_csv(p)


def test_load_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text("len_scale_t = 3.0\nbogus_key = 1\n")
    with pytest.raises(ConfigError, match="bogus_key"):
        load_config(p)


def test_load_config_rejects_bad_toml(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text("not [valid toml\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_hyper_and_sampler_from_config(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(
        "len_scale_t = 3.0\ntime_kernel = \"wiener\"\nchains = 2\n"
        "iterations = 40\nthin = 4\nburn_in = 10\nseed = 7\n"
    )
    cfg = load_config(p)
    hyper = hyper_from_config(cfg)
    assert hyper.len_scale_t == 3.0
    assert hyper.time_kernel == "wiener"
    sampler = sampler_from_config(cfg)
    assert (sampler.n_chains, sampler.n_iterations, sampler.seed) == (2, 40, 7)
    # CLI overrides win
    sampler2 = sampler_from_config(cfg, seed=9, n_chains=None)
    assert sampler2.seed == 9 and sampler2.n_chains == 2


def test_invalid_config_value_raises_config_error():
    with pytest.raises(ConfigError):
        hyper_from_config({"len_scale_t": -1.0})
    with pytest.raises(ConfigError):
        sampler_from_config({"thin": 3, "iterations": 20})


@pytest.fixture(scope="module")
def fit(tmp_path_factory):
    ds, _ = generate(SimConfig(n_respondents=5, n_items=2, n_periods=3,
                               n_categories=3, seed=1))
    samples = run(ds, HyperParams(),
                  SamplerConfig(n_chains=2, burn_in=4, n_iterations=8, thin=2, seed=0))
    return samples


def test_save_load_fit_roundtrip(tmp_path, fit):
    save_fit(tmp_path, fit)
    back = load_fit(tmp_path)
    assert np.array_equal(back.traits, fit.traits)
    assert np.array_equal(back.irf_grid, fit.irf_grid)
    assert np.array_equal(back.slopes, fit.slopes)
    for s in range(len(fit.thresholds)):
        assert np.array_equal(back.thresholds[s], fit.thresholds[s])
    assert back.hyper == fit.hyper
    assert back.config == fit.config
    assert np.array_equal(back.grid_nodes, fit.grid_nodes)
    assert back.shared_items == fit.shared_items


def test_write_trait_summary(tmp_path, fit):
    p = tmp_path / "traits.csv"
    write_trait_summary(p, fit)
    lines = p.read_text().splitlines()
    assert lines[0] == "respondent,time,mean,sd"
    assert len(lines) == 1 + 5 * 3
    r, t, mean, sd = lines[1].split(",")
    assert (r, t) == ("1", "1")
    assert float(mean) == pytest.approx(fit.trait_means()[0, 0], abs=1e-5)
    assert float(sd) > 0


def test_write_metrics_csv(tmp_path):
    p = tmp_path / "metrics.csv"
    write_metrics_csv(p, [("a", "corr", 0.95, 0.01), ("b", "rmse", 0.1, None)])
    lines = p.read_text().splitlines()
    assert lines[0] == "variant,metric,value,std_error"
    assert lines[1] == "a,corr,0.95,0.01"
    assert lines[2] == "b,rmse,0.1,"


def test_write_split_manifest(tmp_path):
    p = tmp_path / "split.csv"
    write_split_manifest(p, np.array([True, False, True]))
    assert p.read_text().splitlines() == ["row,set", "1,train", "2,test", "3,train"]
