"""Multi-chain convergence diagnostics: split-chain R-hat and effective sample size."""

from __future__ import annotations

import numpy as np

RHAT_SENTINEL = np.inf
ESS_SENTINEL = 0.0


def _split_chains(chains: np.ndarray) -> np.ndarray:
    n_chains, n_iter = chains.shape
    half = n_iter // 2
    return np.concatenate([chains[:, :half], chains[:, half: 2 * half]], axis=0)


def rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction for one scalar parameter.

    ``chains`` has shape (n_chains, n_iterations). Each chain is halved before
    computing between/within variances, which also catches within-chain trends.
    Zero within-variance (degenerate chains) returns +inf.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 4:
        raise ValueError("need at least 2 chains and 4 iterations")
    split = _split_chains(chains)
    nu = split.shape[1]
    within = split.var(axis=1, ddof=1).mean()
    if within == 0.0:
        return RHAT_SENTINEL
    between = nu * split.mean(axis=1).var(ddof=1)
    var_hat = (nu - 1) / nu * within + between / nu
    return float(np.sqrt(var_hat / within))


def _autocorr(x: np.ndarray) -> np.ndarray:
    """Biased autocorrelation of one chain via FFT."""
    n = x.shape[0]
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(x, size)
    acov = np.fft.irfft(fx * np.conj(fx), size)[:n] / n
    if acov[0] == 0.0:
        return np.zeros(n)
    return acov / acov[0]


def ess_count(chains: np.ndarray) -> float:
    """Autocorrelation-adjusted effective draw count, pooled over chains.

    N_total / (1 + 2 sum_k rho_k) where the chain-averaged autocorrelations are
    summed while consecutive paired sums (rho_{2k} + rho_{2k+1}) stay positive
    (Geyer's initial positive sequence). Constant chains return the 0 sentinel.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 1 or chains.shape[1] < 4:
        raise ValueError("need chains of at least 4 iterations")
    n_chains, n_iter = chains.shape
    if np.all(chains.var(axis=1) == 0.0):
        return ESS_SENTINEL
    rho = np.mean([_autocorr(chains[c]) for c in range(n_chains)], axis=0)
    total = 0.0
    k = 1
    while k + 1 < n_iter:
        pair = rho[k] + rho[k + 1]
        if pair < 0.0:
            break
        total += pair
        k += 2
    denom = 1.0 + 2.0 * total
    n_total = n_chains * n_iter
    return float(min(n_total / max(denom, 1e-12), n_total * 2.0))


def summarize(chains_by_param: np.ndarray) -> dict[str, float]:
    """Worst-case diagnostics over a (n_chains, n_iterations, n_params) stack.

    With a single chain R-hat is undefined and reported as NaN."""
    arr = np.asarray(chains_by_param, dtype=float)
    if arr.shape[0] >= 2:
        rhats = np.array([rhat(arr[:, :, p]) for p in range(arr.shape[2])])
    else:
        rhats = np.full(arr.shape[2], np.nan)
    esss = np.array([ess_count(arr[:, :, p]) for p in range(arr.shape[2])])
    finite = rhats[np.isfinite(rhats)]
    return {
        "max_rhat": float(np.max(rhats)) if not np.all(np.isnan(rhats)) else np.nan,
        "min_ess": float(np.min(esss)),
        "mean_rhat": float(np.mean(finite)) if finite.size else np.inf,
        "mean_ess": float(np.mean(esss)),
    }
