import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynirt.kernels import (
    KernelSpec,
    NumericalError,
    gp_conditional,
    gram,
    kernel_matrix,
    matern52,
    rbf,
    stable_cholesky,
    wiener_cov,
)


def test_rbf_values():
    assert rbf(0.0, 0.0, 1.0) == 1.0
    # exp(-0.5), mpmath 40 digits
    assert rbf(1.0, 0.0, 1.0) == pytest.approx(0.6065306597126334, abs=1e-15)
    assert rbf(3.0, 1.0, 2.0) == pytest.approx(np.exp(-0.5), abs=1e-15)


def test_matern52_values():
    # (1 + a + a^2/3) exp(-a) at a = sqrt(5) d / l, mpmath 40 digits
    assert matern52(2.0, 1.0, 5.0) == pytest.approx(0.9679861199640714, abs=1e-15)
    assert matern52(3.5, 1.0, 1.0) == pytest.approx(0.06351021454894375, abs=1e-15)
    assert matern52(4.0, 4.0, 2.0) == 1.0


def test_wiener_cov_accumulates_diffusion():
    dv = np.array([0.25, 0.25, 0.5])
    assert wiener_cov(1, 1, 1.0, dv) == 1.0
    assert wiener_cov(2, 4, 1.0, dv) == 1.25  # min period 2 -> one increment
    assert wiener_cov(4, 4, 1.0, dv) == 2.0
    assert wiener_cov(3, 2, 2.0, dv) == 2.25


def test_wiener_cov_rejects_bad_periods():
    with pytest.raises(ValueError):
        wiener_cov(0, 1, 1.0, [0.25])
    with pytest.raises(ValueError):
        wiener_cov(3, 5, 1.0, [0.25])  # too few diffusion terms


def test_kernel_matrix_static_is_identity_on_distinct_points():
    pts = np.array([1.0, 2.0, 3.0])
    K = kernel_matrix(pts, pts, KernelSpec("static"))
    assert np.array_equal(K, np.eye(3))


def test_kernel_matrix_wiener_matches_scalar_form():
    spec = KernelSpec("wiener", anchor_var=1.5, diffusion_var=0.3)
    periods = np.arange(1, 6)
    K = kernel_matrix(periods, periods, spec)
    dv = np.full(4, 0.3)
    for a in range(5):
        for b in range(5):
            assert K[a, b] == pytest.approx(wiener_cov(a + 1, b + 1, 1.5, dv), abs=1e-12)


def test_gram_adds_jitter_and_is_symmetric():
    spec = KernelSpec("rbf", length_scale=1.0, jitter=1e-4)
    pts = np.linspace(-2, 2, 7)
    K = gram(pts, spec)
    assert np.allclose(K, K.T)
    assert np.allclose(np.diag(K), 1.0 + 1e-4)


def test_stable_cholesky_escalates_jitter():
    # rank-1 matrix: plain Cholesky fails, jitter rescues it
    v = np.ones(4)
    K = np.outer(v, v)
    L = stable_cholesky(K.copy(), 1e-8)
    assert np.allclose(L @ L.T, K, atol=1e-2)


def test_stable_cholesky_raises_with_context():
    K = -np.eye(3)
    with pytest.raises(NumericalError, match="negative block"):
        stable_cholesky(K, 1e-8, context="negative block")


def _joint_conditional_oracle(train_x, train_f, test_x, spec, mean=None):
    """Condition the jittered joint Gaussian over [test; train] by block partition."""
    from dynirt.kernels import _affine_mean

    joint = np.concatenate([test_x, train_x])
    K = kernel_matrix(joint, joint, spec)
    K = 0.5 * (K + K.T) + spec.jitter * np.eye(joint.shape[0])
    nt = test_x.shape[0]
    K_ss, K_st, K_tt = K[:nt, :nt], K[:nt, nt:], K[nt:, nt:]
    mu_s = _affine_mean(np.asarray(test_x, dtype=float), mean)
    mu_t = _affine_mean(np.asarray(train_x, dtype=float), mean)
    solve = np.linalg.solve(K_tt, train_f - mu_t)
    mean_out = mu_s + K_st @ solve
    cov = K_ss - K_st @ np.linalg.solve(K_tt, K_st.T)
    return mean_out, 0.5 * (cov + cov.T)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("kind", ["rbf", "matern52"])
def test_gp_conditional_matches_block_partition(seed, kind):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(kind, length_scale=rng.uniform(0.5, 3.0), jitter=1e-6)
    train_x = np.sort(rng.uniform(-3, 3, size=8))
    test_x = np.sort(rng.uniform(-4, 4, size=5))
    train_f = rng.standard_normal(8)
    mean = (rng.standard_normal(), rng.standard_normal())
    got_m, got_c = gp_conditional(train_x, train_f, test_x, spec, mean=mean)
    exp_m, exp_c = _joint_conditional_oracle(train_x, train_f, test_x, spec, mean=mean)
    assert np.max(np.abs(got_m - exp_m)) < 1e-8
    assert np.max(np.abs(got_c - exp_c)) < 1e-8


def test_gp_conditional_without_training_data_returns_prior():
    spec = KernelSpec("rbf", length_scale=1.0, jitter=1e-6)
    test_x = np.array([-1.0, 0.0, 1.0])
    mean, cov = gp_conditional(np.zeros(0), np.zeros(0), test_x, spec, mean=(0.5, 2.0))
    assert np.allclose(mean, 0.5 + 2.0 * test_x)
    assert np.allclose(cov, gram(test_x, spec))


def test_gp_conditional_interpolates_training_data():
    spec = KernelSpec("rbf", length_scale=1.0, jitter=1e-10)
    x = np.array([-1.0, 0.5, 2.0])
    f = np.array([0.3, -0.7, 1.2])
    mean, cov = gp_conditional(x, f, x, spec)
    assert np.allclose(mean, f, atol=1e-6)
    assert np.all(np.diag(cov) < 1e-6)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-4, 4), min_size=2, max_size=10, unique=True),
    st.floats(0.3, 4.0),
    st.sampled_from(["rbf", "matern52"]),
)
def test_gram_is_positive_definite(points, length_scale, kind):
    spec = KernelSpec(kind, length_scale=length_scale, jitter=1e-6)
    K = gram(np.array(points), spec)
    np.linalg.cholesky(K + 1e-9 * np.eye(len(points)))  # must not raise


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.2, 5.0))
def test_correlation_kernels_bounded_by_one(a, b, length_scale):
    for fn in (rbf, matern52):
        v = float(fn(a, b, length_scale))
        assert 0.0 <= v <= 1.0 + 1e-12
        assert float(fn(a, a, length_scale)) == pytest.approx(1.0)
