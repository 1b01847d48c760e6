import numpy as np
import pytest
from scipy import stats

from dynirt.ess import EssError, GaussianPrior, ess_step


def _chain(prior, loglik, start, n_steps, seed):
    rng = np.random.default_rng(seed)
    x = np.asarray(start, dtype=float)
    out = np.empty((n_steps, x.shape[0]))
    ll = None
    for k in range(n_steps):
        x, ll = ess_step(x, prior, loglik, rng, current_loglik=ll)
        out[k] = x
    return out


def test_prior_recovery_flat_likelihood():
    # with a constant likelihood the stationary law is exactly the prior
    prior = GaussianPrior(mean=np.array([1.5]), cov_factor=np.array([[2.0]]))
    draws = _chain(prior, lambda z: 0.0, np.array([0.0]), 4000, seed=0)[500:, 0]
    ks = stats.kstest(draws, "norm", args=(1.5, 2.0))
    assert ks.pvalue > 1e-4


def test_gaussian_conjugate_posterior_recovery():
    # prior N(0, 1), likelihood N(y=1 | x, 0.5^2) -> posterior
    # N(y/(1 + 0.25), 1/(1 + 1/0.25)) = N(0.8, 0.2)
    prior = GaussianPrior(mean=np.zeros(1), cov_factor=np.eye(1))

    def loglik(x):
        return -0.5 * float((1.0 - x[0]) ** 2) / 0.25

    draws = _chain(prior, loglik, np.zeros(1), 20000, seed=1)[1000:, 0]
    assert draws.mean() == pytest.approx(0.8, abs=0.02)
    assert draws.var() == pytest.approx(0.2, abs=0.02)


def test_multivariate_state_keeps_shape_and_moves():
    rng = np.random.default_rng(2)
    L = np.linalg.cholesky(np.array([[1.0, 0.6], [0.6, 1.0]]))
    prior = GaussianPrior(mean=np.zeros(2), cov_factor=L)
    x = np.zeros(2)
    moved = False
    for _ in range(20):
        x_new, _ = ess_step(x, prior, lambda z: 0.0, rng)
        moved = moved or not np.allclose(x_new, x)
        x = x_new
    assert x.shape == (2,)
    assert moved


def test_nonfinite_likelihood_is_rejected_not_raised():
    prior = GaussianPrior(mean=np.zeros(1), cov_factor=np.eye(1))

    def loglik(x):
        if x[0] > 0:
            return np.nan
        return 0.0

    rng = np.random.default_rng(3)
    x = np.array([-0.5])
    for _ in range(50):
        x, _ = ess_step(x, prior, loglik, rng)
        assert x[0] <= 0


def test_raises_when_current_state_has_nonfinite_loglik():
    prior = GaussianPrior(mean=np.zeros(1), cov_factor=np.eye(1))
    with pytest.raises(EssError):
        ess_step(np.zeros(1), prior, lambda z: -np.inf, np.random.default_rng(0))


def test_dimension_mismatch_raises():
    prior = GaussianPrior(mean=np.zeros(2), cov_factor=np.eye(2))
    with pytest.raises(ValueError):
        ess_step(np.zeros(3), prior, lambda z: 0.0, np.random.default_rng(0))


def test_prior_factor_validation():
    with pytest.raises(ValueError):
        GaussianPrior(mean=np.zeros(2), cov_factor=np.eye(3))
    with pytest.raises(ValueError):
        GaussianPrior(mean=np.zeros(1), cov_factor=np.array([[np.inf]]))


def test_loglik_threshold_never_exceeds_current_plus_log_u():
    # acceptance requires value > current + log(u) with u in (0, 1]; a step from
    # a likelihood maximum with a sharply peaked target must still terminate
    prior = GaussianPrior(mean=np.zeros(1), cov_factor=np.eye(1))

    def loglik(x):
        return -50.0 * float(x[0] ** 2)

    rng = np.random.default_rng(4)
    x = np.zeros(1)
    for _ in range(100):
        x, value = ess_step(x, prior, loglik, rng)
        assert np.isfinite(value)
