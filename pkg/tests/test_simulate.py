import numpy as np
import pytest

from dynirt.data import validate_dataset
from dynirt.simulate import SimConfig, generate, train_test_split


def test_generate_shapes_and_validity():
    cfg = SimConfig(n_respondents=8, n_items=3, n_periods=4, n_categories=3, seed=0)
    ds, truth = generate(cfg)
    assert ds.n_observations == 8 * 3 * 4
    assert validate_dataset(ds) == []
    assert truth.true_traits.shape == (8, 4)
    assert truth.true_irf_grid.shape == (3, 4, cfg.grid_points)
    assert truth.true_thresholds.shape == (3, 4, 2)
    assert ds.response.min() >= 1 and ds.response.max() <= 3


def test_generate_is_deterministic():
    cfg = SimConfig(n_respondents=5, n_items=2, n_periods=3, seed=42)
    ds1, t1 = generate(cfg)
    ds2, t2 = generate(cfg)
    assert ds1 == ds2
    assert np.array_equal(t1.true_traits, t2.true_traits)
    ds3, _ = generate(SimConfig(n_respondents=5, n_items=2, n_periods=3, seed=43))
    assert ds1 != ds3


def test_thresholds_sorted_and_constant_over_time():
    cfg = SimConfig(n_respondents=4, n_items=5, n_periods=6, n_categories=5, seed=1)
    _, truth = generate(cfg)
    for j in range(5):
        assert np.all(np.diff(truth.true_thresholds[j, 0]) > 0)
        for t in range(6):
            assert np.array_equal(truth.true_thresholds[j, t], truth.true_thresholds[j, 0])


def test_shared_items_replicate_response_functions():
    cfg = SimConfig(n_respondents=4, n_items=3, n_periods=5, items_shared=True, seed=2)
    ds, truth = generate(cfg)
    assert ds.items_shared_across_time
    for t in range(5):
        assert np.array_equal(truth.true_irf_grid[:, t], truth.true_irf_grid[:, 0])


def test_nonshared_items_differ_across_time():
    cfg = SimConfig(n_respondents=4, n_items=3, n_periods=5, seed=2)
    _, truth = generate(cfg)
    assert not np.array_equal(truth.true_irf_grid[:, 0], truth.true_irf_grid[:, 1])


def test_trait_trajectories_are_smooth_under_matern():
    # long length scale: adjacent periods correlate strongly
    cfg = SimConfig(n_respondents=400, n_items=1, n_periods=10, len_scale_t=5.0, seed=3)
    _, truth = generate(cfg)
    x = truth.true_traits
    corr = np.corrcoef(x[:, :-1].ravel(), x[:, 1:].ravel())[0, 1]
    assert corr > 0.9


def test_binary_simulation():
    cfg = SimConfig(n_respondents=6, n_items=2, n_periods=2, n_categories=2, seed=4)
    ds, truth = generate(cfg)
    assert set(np.unique(ds.response)) <= {1, 2}
    assert truth.true_thresholds.shape[-1] == 1


def test_responses_track_latent_function_value():
    # responses are ordered-probit draws around f, so they must correlate
    # strongly with the latent function value at each respondent's trait
    cfg = SimConfig(n_respondents=300, n_items=5, n_periods=2, n_categories=5, seed=5)
    ds, truth = generate(cfg)
    nodes = np.linspace(cfg.grid_min, cfg.grid_max, cfg.grid_points)
    spacing = nodes[1] - nodes[0]
    x = truth.true_traits[ds.respondent, ds.period]
    idx = np.clip(np.rint((x - nodes[0]) / spacing), 0, cfg.grid_points - 1).astype(int)
    f = truth.true_irf_grid[ds.item, ds.period, idx]
    corr = np.corrcoef(f, ds.response)[0, 1]
    assert corr > 0.5


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_categories=1)
    with pytest.raises(ValueError):
        SimConfig(threshold_low=1.0, threshold_high=-1.0)


def test_train_test_split_partitions():
    cfg = SimConfig(n_respondents=10, n_items=3, n_periods=3, seed=6)
    ds, _ = generate(cfg)
    train, test = train_test_split(ds, 0.8, seed=0)
    assert train.n_observations + test.n_observations == ds.n_observations
    assert train.n_observations == round(0.8 * ds.n_observations)
    combined = np.sort(
        np.stack([np.concatenate([getattr(part, f) for part in (train, test)])
                  for f in ("respondent", "item", "period", "response")], axis=1),
        axis=0,
    )
    original = np.sort(
        np.stack([ds.respondent, ds.item, ds.period, ds.response], axis=1), axis=0
    )
    assert np.array_equal(combined, original)


def test_train_test_split_validates_fraction():
    ds, _ = generate(SimConfig(n_respondents=3, n_items=2, n_periods=2, seed=0))
    with pytest.raises(ValueError):
        train_test_split(ds, 1.0, seed=0)
    with pytest.raises(ValueError):
        train_test_split(ds, 0.0, seed=0)
