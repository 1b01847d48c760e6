import numpy as np
import pytest

from dynirt.metrics import (
    _binary_auc,
    icc_rmse,
    normal_grid_weights,
    predictive_scores,
    trait_correlation,
)


def test_trait_correlation_attenuation():
    # estimates = truth + independent noise with variance 0.25 ->
    # corr = 1/sqrt(1.25) = 0.8944271909999159
    rng = np.random.default_rng(0)
    truth = rng.standard_normal(200000)
    est = truth + 0.5 * rng.standard_normal(200000)
    assert trait_correlation(est, truth) == pytest.approx(0.8944271909999159, abs=0.005)


def test_trait_correlation_sign_invariant():
    rng = np.random.default_rng(1)
    truth = rng.standard_normal((20, 5))
    assert trait_correlation(-truth, truth) == pytest.approx(1.0)


def test_trait_correlation_errors():
    with pytest.raises(ValueError):
        trait_correlation(np.zeros(5), np.arange(5.0))
    with pytest.raises(ValueError):
        trait_correlation(np.arange(4.0), np.arange(5.0))


def test_icc_rmse_zero_for_identical_curves():
    grid = np.linspace(-5, 5, 101)
    w = normal_grid_weights(grid)
    curves = np.tile(np.tanh(grid), (3, 2, 1))
    assert icc_rmse(curves, curves, w) == 0.0


def test_icc_rmse_constant_offset():
    # constant error c gives weighted RMSE exactly |c| regardless of weights
    grid = np.linspace(-5, 5, 101)
    w = normal_grid_weights(grid)
    a = np.tile(np.tanh(grid), (4, 1))
    assert icc_rmse(a + 0.3, a, w) == pytest.approx(0.3, rel=1e-12)


def test_icc_rmse_weighting_downweights_tails():
    # an error confined to |x| > 4 is nearly invisible under the normal weights
    grid = np.linspace(-5, 5, 501)
    w = normal_grid_weights(grid)
    base = np.zeros((1, grid.shape[0]))
    err = np.where(np.abs(grid) > 4, 1.0, 0.0)[None, :]
    assert icc_rmse(base + err, base, w) < 0.01


def test_icc_rmse_shape_errors():
    grid = np.linspace(-1, 1, 11)
    with pytest.raises(ValueError):
        icc_rmse(np.zeros((2, 11)), np.zeros((3, 11)), normal_grid_weights(grid))
    with pytest.raises(ValueError):
        icc_rmse(np.zeros((2, 11)), np.zeros((2, 11)), np.ones(7))


def test_binary_auc_hand_value():
    # positives {0.9, 0.8, 0.3}, negatives {0.7, 0.4}: 4 of 6 pairs correctly
    # ordered -> AUC 2/3
    labels = np.array([1, 1, 0, 0, 1])
    scores = np.array([0.9, 0.8, 0.7, 0.4, 0.3])
    assert _binary_auc(labels, scores) == pytest.approx(2.0 / 3.0)


def test_binary_auc_ties_give_half_credit():
    labels = np.array([1, 0])
    scores = np.array([0.5, 0.5])
    assert _binary_auc(labels, scores) == pytest.approx(0.5)


def test_binary_auc_degenerate_is_nan():
    assert np.isnan(_binary_auc(np.ones(3), np.arange(3.0)))


def test_predictive_scores_perfect_predictions():
    probs = np.array([
        [0.9, 0.05, 0.05],
        [0.1, 0.8, 0.1],
        [0.05, 0.05, 0.9],
    ])
    y = np.array([1, 2, 3])
    acc, mean_ll, auc = predictive_scores(probs, y)
    assert acc == 1.0
    assert mean_ll == pytest.approx(np.mean(np.log([0.9, 0.8, 0.9])))
    assert auc == 1.0


def test_predictive_scores_binary_matches_mann_whitney():
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.4, 0.6], [0.3, 0.7]])
    y = np.array([1, 1, 1, 2, 1])
    acc, _, auc = predictive_scores(probs, y)
    # cumulative p(y <= 1) is column 0; compare against direct pair counting
    assert auc == pytest.approx(_binary_auc(y <= 1, probs[:, 0]))
    assert acc == pytest.approx(4 / 5)


def test_predictive_scores_handles_nan_padding():
    probs = np.array([[0.2, 0.8, np.nan], [0.1, 0.3, 0.6]])
    y = np.array([2, 3])
    acc, mean_ll, _ = predictive_scores(probs, y)
    assert acc == 1.0
    assert mean_ll == pytest.approx(np.mean(np.log([0.8, 0.6])))


def test_predictive_scores_empty_raises():
    with pytest.raises(ValueError):
        predictive_scores(np.zeros((0, 2)), np.zeros(0, dtype=int))
