import numpy as np
import pytest

from dynirt.data import HyperParams, ResponseDataset, validate_dataset


def _tiny_dataset(**overrides):
    base = dict(
        n_respondents=2,
        n_items=2,
        n_periods=2,
        categories_per_item=[3, 2],
        respondent=[0, 0, 1, 1],
        item=[0, 1, 0, 1],
        period=[0, 0, 1, 1],
        response=[3, 2, 1, 1],
    )
    base.update(overrides)
    return ResponseDataset(**base)


def test_valid_dataset_passes():
    assert validate_dataset(_tiny_dataset()) == []


def test_out_of_range_indices_reported():
    report = validate_dataset(_tiny_dataset(respondent=[0, 0, 5, 1]))
    assert any("respondent index" in r for r in report)
    report = validate_dataset(_tiny_dataset(period=[0, 0, 1, 9]))
    assert any("period index" in r for r in report)


def test_response_above_category_count_reported():
    report = validate_dataset(_tiny_dataset(response=[3, 2, 1, 5]))
    assert any("response 5 out of range" in r for r in report)


def test_duplicate_triples_reported():
    ds = _tiny_dataset(respondent=[0, 0, 0, 0], item=[0, 0, 1, 1], period=[0, 0, 0, 0],
                       response=[1, 2, 1, 1])
    report = validate_dataset(ds)
    assert any("duplicated" in r for r in report)


def test_empty_item_and_period_reported():
    ds = _tiny_dataset(item=[0, 0, 0, 0], response=[1, 2, 3, 1])
    report = validate_dataset(ds)
    assert any("items with no observations: [1]" in r for r in report)
    ds = _tiny_dataset(period=[0, 0, 0, 0])
    report = validate_dataset(ds)
    assert any("periods with no observations: [1]" in r for r in report)


def test_subset_keeps_metadata():
    ds = _tiny_dataset()
    sub = ds.subset(np.array([True, False, True, False]))
    assert sub.n_observations == 2
    assert sub.n_respondents == ds.n_respondents
    assert sub.categories_per_item.tolist() == [3, 2]
    assert sub.respondent.tolist() == [0, 1]


def test_dataset_equality():
    assert _tiny_dataset() == _tiny_dataset()
    assert _tiny_dataset() != _tiny_dataset(response=[1, 1, 1, 1])


def test_hyperparams_validation():
    HyperParams()  # defaults are valid
    with pytest.raises(ValueError):
        HyperParams(grid_min=2.0, grid_max=-2.0)
    with pytest.raises(ValueError):
        HyperParams(len_scale_t=0.0)
    with pytest.raises(ValueError):
        HyperParams(time_kernel="brownian")
    with pytest.raises(ValueError):
        HyperParams(grid_points=1)


def test_hyperparams_defaults():
    h = HyperParams()
    assert h.grid_points == 500
    assert (h.grid_min, h.grid_max) == (-5.0, 5.0)
    assert h.len_scale_x == 1.0
    assert h.len_scale_t == 5.0
    assert h.time_kernel == "matern52"
