"""Covariance functions, jittered Gram matrices, and exact GP conditionals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT5 = np.sqrt(5.0)


class NumericalError(RuntimeError):
    """Hard numerical failure (factorization failed after jitter escalation)."""


@dataclass(frozen=True)
class KernelSpec:
    """A covariance function plus the diagonal jitter used when forming Grams.

    kind: "rbf" | "matern52" | "wiener" | "static".
    For "rbf"/"matern52" ``length_scale`` applies; for "wiener" the anchor and
    diffusion variances apply and inputs are 1-based integer periods; "static"
    is the identity-correlation kernel (1 iff same input value, else 0).
    """

    kind: str
    length_scale: float = 1.0
    anchor_var: float = 1.0
    diffusion_var: float = 0.25
    jitter: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("rbf", "matern52", "wiener", "static"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.length_scale <= 0 or self.anchor_var <= 0 or self.diffusion_var <= 0:
            raise ValueError("kernel parameters must be strictly positive")
        if self.jitter <= 0:
            raise ValueError("jitter must be strictly positive")


def rbf(x, x2, length_scale: float):
    """Squared-exponential correlation exp(-0.5 (x - x')^2 / l^2)."""
    if length_scale <= 0:
        raise ValueError("length_scale must be strictly positive")
    d = np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)
    return np.exp(-0.5 * d * d / (length_scale * length_scale))


def matern52(t, t2, length_scale: float):
    """Matern-5/2 correlation (1 + a + a^2/3) exp(-a), a = sqrt(5) |t - t'| / l."""
    if length_scale <= 0:
        raise ValueError("length_scale must be strictly positive")
    a = SQRT5 * np.abs(np.asarray(t, dtype=float) - np.asarray(t2, dtype=float)) / length_scale
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def wiener_cov(t, t2, anchor_var: float, diffusion_vars) -> float:
    """Random-walk covariance: anchor variance plus accumulated diffusion.

    Cov(x_s, x_t) = C + sum_{u=2}^{min(s,t)} sigma^2_u for 1-based periods.
    """
    t, t2 = int(t), int(t2)
    if t < 1 or t2 < 1:
        raise ValueError("periods are 1-based and must be >= 1")
    diffusion_vars = np.asarray(diffusion_vars, dtype=float)
    lo = min(t, t2)
    if lo >= 2 and diffusion_vars.shape[0] < max(t, t2) - 1:
        raise ValueError("diffusion_vars too short for the requested periods")
    return float(anchor_var + diffusion_vars[: lo - 1].sum())


def kernel_matrix(a, b, spec: KernelSpec) -> np.ndarray:
    """Cross-covariance matrix K(a, b) without jitter."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if spec.kind == "rbf":
        return rbf(a[:, None], b[None, :], spec.length_scale)
    if spec.kind == "matern52":
        return matern52(a[:, None], b[None, :], spec.length_scale)
    if spec.kind == "static":
        return (a[:, None] == b[None, :]).astype(float)
    # wiener: inputs are 1-based integer periods
    lo = np.minimum(a[:, None], b[None, :])
    return spec.anchor_var + spec.diffusion_var * (lo - 1.0)


def gram(points, spec: KernelSpec) -> np.ndarray:
    """Symmetric Gram matrix over ``points`` with jitter on the diagonal."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return np.zeros((0, 0))
    K = kernel_matrix(points, points, spec)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += spec.jitter
    return K


def stable_cholesky(K: np.ndarray, jitter: float, context: str = "") -> np.ndarray:
    """Lower Cholesky factor of K, escalating extra jitter x10 up to 1e-2.

    ``K`` is assumed to already carry the base jitter; on failure extra diagonal
    mass is added starting at ``jitter`` and multiplied by 10 until 1e-2, after
    which a NumericalError names the offending block via ``context``.
    """
    if K.shape[0] == 0:
        return np.zeros((0, 0))
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    extra = jitter
    eye = np.eye(K.shape[0])
    while extra <= 1e-2:
        try:
            return np.linalg.cholesky(K + extra * eye)
        except np.linalg.LinAlgError:
            extra *= 10.0
    where = f" ({context})" if context else ""
    raise NumericalError(f"Cholesky failed after jitter escalation to 1e-2{where}")


def _affine_mean(points: np.ndarray, mean) -> np.ndarray:
    """Evaluate the prior mean: None (zero), (intercept, slope) pair, or callable."""
    if mean is None:
        return np.zeros(points.shape[0])
    if callable(mean):
        return np.asarray(mean(points), dtype=float)
    intercept, slope = mean
    return intercept + slope * points


def gp_conditional(train_x, train_f, test_x, spec: KernelSpec, mean=None):
    """Exact GP posterior mean and covariance at ``test_x`` given training data.

    The affine prior mean is handled by residual centering: subtracted at the
    training points and added back at the test points. The training Gram and
    the test prior diagonal both carry the spec jitter, so the result matches
    conditioning the jittered joint Gaussian exactly. Returns (mean, cov).
    """
    train_x = np.asarray(train_x, dtype=float)
    train_f = np.asarray(train_f, dtype=float)
    test_x = np.asarray(test_x, dtype=float)
    if train_x.shape[0] != train_f.shape[0]:
        raise ValueError("train_x and train_f must have the same length")
    prior_mean = _affine_mean(test_x, mean)
    K_tt = gram(test_x, spec)
    if train_x.shape[0] == 0:
        return prior_mean, K_tt
    V = gram(train_x, spec)
    L = stable_cholesky(V, spec.jitter, context="gp_conditional train Gram")
    K_st = kernel_matrix(test_x, train_x, spec)
    resid = train_f - _affine_mean(train_x, mean)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, resid))
    mean_out = prior_mean + K_st @ alpha
    W = np.linalg.solve(L, K_st.T)
    cov = K_tt - W.T @ W
    cov = 0.5 * (cov + cov.T)
    return mean_out, cov
