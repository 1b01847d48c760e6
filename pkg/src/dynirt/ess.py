"""Elliptical slice sampling for targets of the form N(mu, Sigma) x likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SHRINK_ITERATIONS = 1000


class EssError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianPrior:
    """Prior mean and lower-triangular factor of the (jittered) covariance."""

    mean: np.ndarray
    cov_factor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov_factor", np.asarray(self.cov_factor, dtype=float))
        if self.cov_factor.shape != (self.mean.shape[0], self.mean.shape[0]):
            raise ValueError("cov_factor shape must match mean dimension")
        if not np.all(np.isfinite(self.cov_factor)):
            raise ValueError("cov_factor must be finite")

    def draw_centered(self, rng: np.random.Generator) -> np.ndarray:
        return self.cov_factor @ rng.standard_normal(self.mean.shape[0])


def _finite_loglik(loglik, z: np.ndarray) -> float:
    value = loglik(z)
    value = float(value)
    if np.isnan(value):
        return -np.inf
    return value


def ess_step_rows(current: np.ndarray, mean: np.ndarray, nu: np.ndarray,
                  loglik_rows, rng: np.random.Generator,
                  max_iter: int = MAX_SHRINK_ITERATIONS):
    """One elliptical slice update of R independent rows at once.

    ``current`` is (R, D) with one row per independent target; ``mean`` the
    prior means (broadcastable to (R, D)); ``nu`` the centered prior draws
    (R, D); ``loglik_rows(X, active)`` maps an (R, D) state matrix to the (R,)
    vector of per-row log-likelihoods, where ``active`` is None (score all
    rows) or a boolean row mask whose False entries may be left arbitrary.
    Every row runs its own angle bracket; rows that have accepted stop
    consuming randomness. Equivalent to R sequential updates, just evaluated
    together.
    """
    current = np.asarray(current, dtype=float)
    R = current.shape[0]
    cur_ll = np.asarray(loglik_rows(current, None), dtype=float)
    if not np.all(np.isfinite(cur_ll)):
        raise EssError("log-likelihood must be finite at the current state")

    log_y = cur_ll + np.log1p(-rng.random(R))
    theta = rng.uniform(0.0, 2.0 * np.pi, R)
    theta_min, theta_max = theta - 2.0 * np.pi, theta.copy()

    centered = current - mean
    out = current.copy()
    out_ll = cur_ll.copy()
    active = np.ones(R, dtype=bool)
    first = True
    for _ in range(max_iter):
        proposal = (centered * np.cos(theta)[:, None]
                    + nu * np.sin(theta)[:, None] + mean)
        ll = np.asarray(loglik_rows(proposal, None if first else active), dtype=float)
        ll = np.where(np.isnan(ll), -np.inf, ll)
        first = False
        hit = active & (ll > log_y)
        out[hit] = proposal[hit]
        out_ll[hit] = ll[hit]
        active &= ~hit
        if not active.any():
            return out, out_ll
        neg = active & (theta < 0.0)
        theta_min[neg] = theta[neg]
        pos = active & (theta >= 0.0)
        theta_max[pos] = theta[pos]
        theta[active] = (theta_min[active]
                         + (theta_max[active] - theta_min[active]) * rng.random(active.sum()))
    raise EssError("elliptical slice bracket failed to shrink to an acceptable point")


def ess_step(current, prior: GaussianPrior, loglik, rng: np.random.Generator,
             current_loglik: float | None = None):
    """One elliptical slice sampling update; returns (new_state, new_loglik).

    Proposes along the ellipse through the centered current state and a prior
    draw, shrinking the angle bracket toward 0 (where the proposal equals the
    current state) until the likelihood exceeds the slice threshold. Leaves
    N(mu, Sigma) x likelihood invariant. Non-finite likelihood values are
    treated as -inf (rejected), never raised.
    """
    current = np.asarray(current, dtype=float)
    if current.shape != prior.mean.shape:
        raise ValueError("current state dimension does not match the prior")
    if current_loglik is None:
        current_loglik = _finite_loglik(loglik, current)
    if not np.isfinite(current_loglik):
        raise EssError("log-likelihood must be finite at the current state")

    nu = prior.draw_centered(rng)
    # u in (0, 1] keeps log(u) finite.
    log_y = current_loglik + np.log1p(-rng.random())
    theta = rng.uniform(0.0, 2.0 * np.pi)
    theta_min, theta_max = theta - 2.0 * np.pi, theta

    centered = current - prior.mean
    for _ in range(MAX_SHRINK_ITERATIONS):
        proposal = centered * np.cos(theta) + nu * np.sin(theta) + prior.mean
        value = _finite_loglik(loglik, proposal)
        if value > log_y:
            return proposal, value
        if theta < 0.0:
            theta_min = theta
        else:
            theta_max = theta
        theta = rng.uniform(theta_min, theta_max)
    raise EssError("elliptical slice bracket failed to shrink to an acceptable point")
