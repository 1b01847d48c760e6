"""The full MCMC engine: Gibbs loop over IRFs, grid values, traits, slopes,
and thresholds, with elliptical slice sampling for every conditional.

Update order per iteration: per-(j,t) function values, per-(j,t) dense-grid
values, per-respondent trait paths (snapped to the grid), refresh of function
values at the new traits, per-(j,t) slope/intercept pairs, then thresholds.

Dense-grid draws use pathwise (Matheron) conditioning: a joint prior sample
over the grid is corrected by the conditional mean update, which is an exact
draw from the GP posterior without factorizing the posterior covariance.
Because traits are snapped to grid nodes, the training Gram is a submatrix of
the fixed jittered grid Gram, so conditioning is exact and the drawn grid
values interpolate the block's function values exactly.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .data import HyperParams, ResponseDataset
from .ess import ess_step_rows
from .kernels import KernelSpec, NumericalError, kernel_matrix, stable_cholesky
from .likelihood import (
    all_category_probs,
    cuts_from_free,
    extend_cuts,
    log_phi_interval,
    truncated_standard_normal,
)

# RNG substream phase tags: every (chain, iteration, phase, index) owns an
# independent counter-derived stream so results do not depend on scheduling.
_PHASE_INIT = 0
_PHASE_IRF = 1
_PHASE_GRID = 2
_PHASE_TRAIT = 3
_PHASE_BETA = 4
_PHASE_THRESH = 5
_PHASE_FLIP = 6
_PHASE_LEVEL = 7
_PHASE_SHIFT = 8


def substream(seed: int, chain: int, phase: int, iteration: int = 0, index: int = 0):
    return np.random.default_rng((int(seed), int(chain), int(phase), int(iteration), int(index)))


@dataclass(frozen=True)
class SamplerConfig:
    """Chain layout plus per-iteration sweep counts.

    Each Gibbs iteration repeats the slice updates of a block ``*_sweeps``
    times (repetition sharpens mixing without changing the stationary
    distribution), and ``flip_moves`` toggles the Metropolis reflection
    proposals that let chains hop between mirror-image modes.
    """

    n_chains: int = 3
    burn_in: int = 500
    n_iterations: int = 500
    thin: int = 4
    seed: int = 0
    threads: int = 1
    function_sweeps: int = 2
    trait_sweeps: int = 2
    threshold_sweeps: int = 2
    flip_moves: bool = True

    def __post_init__(self):
        for name in ("n_chains", "burn_in", "n_iterations", "thin", "threads",
                     "function_sweeps", "trait_sweeps", "threshold_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.n_iterations % self.thin != 0:
            raise ValueError("thin must divide n_iterations evenly")

    @property
    def n_kept(self) -> int:
        return self.n_iterations // self.thin


@dataclass(frozen=True)
class DenseGrid:
    nodes: np.ndarray

    @classmethod
    def from_hyper(cls, hyper: HyperParams) -> "DenseGrid":
        return cls(np.linspace(hyper.grid_min, hyper.grid_max, hyper.grid_points))

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def node_index(self, x) -> np.ndarray:
        idx = np.rint((np.asarray(x, dtype=float) - self.nodes[0]) / self.spacing)
        return np.clip(idx, 0, self.n_nodes - 1).astype(np.int64)

    def snap(self, x) -> np.ndarray:
        return self.nodes[self.node_index(x)]


@dataclass
class ChainState:
    """One chain's current latent state. Trait entries are exact grid nodes."""

    traits: np.ndarray  # (n, T), snapped
    irf_grid: np.ndarray  # (m, T, G), or (m, G) when items are shared
    f_resp: np.ndarray  # (m, T, n), function value at each respondent's node
    slopes: np.ndarray  # (m, T), or (m,) when shared
    intercepts: np.ndarray  # same shape as slopes
    thresh_free: list[np.ndarray]  # per threshold set: (C_s - 1,) = (b1, log paddings)


@dataclass
class PosteriorSamples:
    """Thinned multi-chain draws plus the metadata needed for downstream ops."""

    traits: np.ndarray  # (chains, K, n, T)
    irf_grid: np.ndarray  # (chains, K, m, T, G) or (chains, K, m, G); float32
    slopes: np.ndarray  # (chains, K, m, T) or (chains, K, m)
    intercepts: np.ndarray
    thresholds: list[np.ndarray]  # per set: (chains, K, C_s - 1) finite cuts
    set_of_item: np.ndarray  # (m,)
    categories_per_item: np.ndarray
    grid_nodes: np.ndarray
    shared_items: bool
    hyper: HyperParams
    config: SamplerConfig

    @property
    def n_chains(self) -> int:
        return self.traits.shape[0]

    @property
    def n_kept(self) -> int:
        return self.traits.shape[1]

    @property
    def n_periods(self) -> int:
        return self.traits.shape[3]

    def trait_means(self) -> np.ndarray:
        """Posterior mean traits (n, T), pooled over chains and draws."""
        return self.traits.mean(axis=(0, 1))


def time_kernel_spec(hyper: HyperParams) -> KernelSpec:
    if hyper.time_kernel == "matern52":
        return KernelSpec("matern52", length_scale=hyper.len_scale_t, jitter=hyper.jitter)
    if hyper.time_kernel == "wiener":
        return KernelSpec(
            "wiener",
            anchor_var=hyper.wiener_anchor_var,
            diffusion_var=hyper.wiener_diffusion_var,
            jitter=hyper.jitter,
        )
    return KernelSpec("static", jitter=hyper.jitter)


def trait_kernel_matrix(hyper: HyperParams, periods_a, periods_b) -> np.ndarray:
    """Time-kernel cross covariance over 1-based period vectors."""
    return kernel_matrix(periods_a, periods_b, time_kernel_spec(hyper))


def select_inducing(grid: DenseGrid, count: int, k: int):
    """Evenly spaced inducing nodes plus kNN inverse-distance weights.

    Returns (inducing_idx, neighbor_pos, weights): ``neighbor_pos`` maps every
    grid node to positions within the inducing vector, and the weighted average
    of those inducing values extends the function to the whole grid. A grid
    node that coincides with an inducing node reproduces it exactly.
    """
    if count < 1 or count > grid.n_nodes:
        raise ValueError("inducing count must be in 1..grid_points")
    if k > count:
        raise ValueError("knn_k cannot exceed the inducing count")
    raw = np.rint(np.linspace(0, grid.n_nodes - 1, count)).astype(np.int64)
    # include each node's mirror so the set is symmetric about the grid center
    # (reflection proposals then keep functions inside the inducing span)
    inducing_idx = np.unique(np.concatenate([raw, grid.n_nodes - 1 - raw]))
    ind_nodes = grid.nodes[inducing_idx]
    dist = np.abs(grid.nodes[:, None] - ind_nodes[None, :])
    neighbor_pos = np.argsort(dist, axis=1, kind="stable")[:, :k]
    nd = np.take_along_axis(dist, neighbor_pos, axis=1)
    exact = nd[:, 0] == 0.0
    with np.errstate(divide="ignore"):
        w = 1.0 / nd
    w[exact] = 0.0
    w[exact, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return inducing_idx, neighbor_pos, w


class _Problem:
    """Precomputed observation indexing shared by every chain of one fit."""

    def __init__(self, dataset: ResponseDataset, hyper: HyperParams, grid: DenseGrid,
                 sparse: bool | None = None):
        self.dataset = dataset
        self.hyper = hyper
        self.grid = grid
        self.shared = dataset.items_shared_across_time
        n, m, T = dataset.n_respondents, dataset.n_items, dataset.n_periods
        self.n, self.m, self.T = n, m, T

        if hyper.global_thresholds:
            if np.unique(dataset.categories_per_item).size != 1:
                raise ValueError("global thresholds require equal category counts")
            self.set_of_item = np.zeros(m, dtype=np.int64)
        else:
            self.set_of_item = np.arange(m, dtype=np.int64)
        self.n_sets = int(self.set_of_item.max()) + 1
        self.set_categories = np.array(
            [int(dataset.categories_per_item[self.set_of_item == s][0]) for s in range(self.n_sets)]
        )

        # Per-(j, t) observation blocks.
        self.block_resp = [[None] * T for _ in range(m)]
        self.block_y = [[None] * T for _ in range(m)]
        order = np.lexsort((dataset.respondent, dataset.period, dataset.item))
        it, pt, rt, yt = (dataset.item[order], dataset.period[order],
                         dataset.respondent[order], dataset.response[order])
        keys = it * T + pt
        starts = np.searchsorted(keys, np.arange(m * T))
        ends = np.searchsorted(keys, np.arange(m * T), side="right")
        for j in range(m):
            for t in range(T):
                s, e = starts[j * T + t], ends[j * T + t]
                self.block_resp[j][t] = rt[s:e]
                self.block_y[j][t] = yt[s:e]

        # Per-item observations (shared-items IRF and threshold updates).
        order_j = np.lexsort((dataset.respondent, dataset.period, dataset.item))
        self.obs_by_item_order = order_j
        js = dataset.item[order_j]
        self.item_starts = np.searchsorted(js, np.arange(m))
        self.item_ends = np.searchsorted(js, np.arange(m), side="right")

        # Per-period observations sorted by item (function-value updates).
        self.period_item = []
        self.period_resp = []
        self.period_y = []
        for t in range(T):
            counts = [self.block_resp[j][t].size for j in range(m)]
            self.period_item.append(np.repeat(np.arange(m), counts))
            self.period_resp.append(np.concatenate([self.block_resp[j][t] for j in range(m)])
                                    if sum(counts) else np.zeros(0, dtype=np.int64))
            self.period_y.append(np.concatenate([self.block_y[j][t] for j in range(m)])
                                 if sum(counts) else np.zeros(0, dtype=np.int64))

        # Per-respondent observations for trait updates.
        order_i = np.argsort(dataset.respondent, kind="stable")
        self.obs_by_resp_order = order_i
        ris = dataset.respondent[order_i]
        self.resp_ids = ris
        self.resp_starts = np.searchsorted(ris, np.arange(n))
        self.resp_ends = np.searchsorted(ris, np.arange(n), side="right")
        if self.shared:
            self.resp_block = dataset.item[order_i]
        else:
            self.resp_block = dataset.item[order_i] * T + dataset.period[order_i]
        self.resp_period = dataset.period[order_i]
        self.resp_y = dataset.response[order_i]

        # Fixed grid Gram with an effective jitter that factorizes; every
        # conditioning step slices this one jittered matrix so the model is
        # consistent across blocks.
        K = kernel_matrix(grid.nodes, grid.nodes, KernelSpec("rbf", length_scale=hyper.len_scale_x))
        jit = hyper.jitter
        while True:
            Kj = K + jit * np.eye(grid.n_nodes)
            try:
                self.grid_chol = np.linalg.cholesky(Kj)
                break
            except np.linalg.LinAlgError:
                jit *= 10.0
                if jit > 1e-2:
                    raise NumericalError("grid Gram not factorizable below jitter 1e-2")
        self.effective_jitter = jit
        self.grid_gram = Kj

        K_time = trait_kernel_matrix(hyper, np.arange(1, T + 1), np.arange(1, T + 1))
        K_time = K_time + hyper.jitter * np.eye(T)
        self.time_chol = stable_cholesky(K_time, hyper.jitter, context="trait time Gram")
        # Single-period conditionals x_t | x_{-t} of the trait prior, used by
        # the coordinate trait sweeps: (other-period indices, weights, sd).
        self.time_cond = []
        for t in range(T):
            oth = np.concatenate([np.arange(t), np.arange(t + 1, T)])
            if oth.size:
                w = np.linalg.solve(K_time[np.ix_(oth, oth)], K_time[oth, t])
                var = float(K_time[t, t] - K_time[oth, t] @ w)
            else:
                w = np.zeros(0)
                var = float(K_time[t, t])
            self.time_cond.append((oth, w, np.sqrt(max(var, 1e-12))))
        self.resp_rows_of_period = [np.nonzero(self.resp_period == t)[0]
                                    for t in range(T)]
        self.time_inv = cho_solve((self.time_chol, True), np.eye(T))
        self.set_rows = [np.nonzero(self.set_of_item[dataset.item] == s)[0]
                        for s in range(self.n_sets)]
        # Threshold sets grouped by category count so equal-width free vectors
        # update in one batched slice move: (cats, set_ids, obs_rows, obs_group_pos).
        self.thresh_groups = []
        for cats in np.unique(self.set_categories):
            sets = np.nonzero(self.set_categories == cats)[0]
            rows = np.concatenate([self.set_rows[s] for s in sets])
            ids = np.repeat(np.arange(sets.size),
                            [self.set_rows[s].size for s in sets])
            self.thresh_groups.append((int(cats), sets, rows, ids))

        nT_obs = n * T
        if sparse is None:
            self.sparse = bool(self.shared and nT_obs > hyper.sparse_threshold)
        else:
            self.sparse = bool(sparse and self.shared)
        if self.sparse:
            self.inducing_idx, self.knn_pos, self.knn_w = select_inducing(
                grid, hyper.sparse_inducing_count, hyper.knn_k
            )
            sub = self.grid_gram[np.ix_(self.inducing_idx, self.inducing_idx)]
            self.inducing_chol = stable_cholesky(sub, hyper.jitter, context="inducing Gram")

    def extend_from_inducing(self, u: np.ndarray) -> np.ndarray:
        """kNN inverse-distance extension of inducing values to the full grid."""
        return np.einsum("gk,gk->g", self.knn_w, u[self.knn_pos])


def _occupancy(node_idx_t: np.ndarray):
    """Distinct occupied nodes: (occ_nodes, first_index_per_node, position_of_entry)."""
    occ, first, pos = np.unique(node_idx_t, return_index=True, return_inverse=True)
    return occ, first, pos


def _chol_of_occ(prob: _Problem, occ: np.ndarray) -> np.ndarray:
    V = prob.grid_gram[np.ix_(occ, occ)]
    return stable_cholesky(V, prob.hyper.jitter, context=f"occupied-node Gram ({occ.size} nodes)")


def initialize_chain(dataset: ResponseDataset, hyper: HyperParams, grid: DenseGrid,
                     rng: np.random.Generator, prob: _Problem | None = None) -> ChainState:
    """Build a chain's starting state.

    Traits start at the standardized mean normalized score of each
    (respondent, period), scaled by a chain-specific random global sign and
    jittered, so every chain begins near a data-consistent configuration
    instead of a random one (random starts routinely trap chains in
    partially-mirrored modes). Item functions, trend coefficients, and
    thresholds start from their priors.
    """
    if prob is None:
        prob = _Problem(dataset, hyper, grid)
    n, m, T = prob.n, prob.m, prob.T

    d = prob.dataset
    denom = np.maximum(d.categories_per_item[d.item] - 1, 1)
    z = (d.response - 1) / denom
    tot = np.zeros((n, T))
    cnt = np.zeros((n, T))
    np.add.at(tot, (d.respondent, d.period), z)
    np.add.at(cnt, (d.respondent, d.period), 1.0)
    score = np.where(cnt > 0, tot / np.maximum(cnt, 1.0), 0.5)
    sd_t = score.std(axis=0)
    sd_t[sd_t == 0] = 1.0
    traits = (score - score.mean(axis=0)) / sd_t
    sign = float(rng.choice([-1.0, 1.0]))
    traits = traits * sign + 0.5 * rng.standard_normal((n, T))
    traits = grid.snap(traits)

    # Start every item increasing in the chain's own trait orientation:
    # higher normalized score was mapped to higher trait, so sign-matched
    # slopes give a coherent starting orientation. Randomly signed slopes
    # instead start half the items mirrored, and the reflection proposals
    # then scramble the chain into a partially-mirrored local mode before
    # the data-informed trait start can take hold.
    if prob.shared:
        slopes = sign * np.abs(rng.normal(0.0, np.sqrt(hyper.var_slope), size=m))
        intercepts = rng.normal(0.0, np.sqrt(hyper.var_intercept), size=m)
    else:
        slopes = sign * np.abs(rng.normal(0.0, np.sqrt(hyper.var_slope), size=(m, T)))
        intercepts = rng.normal(0.0, np.sqrt(hyper.var_intercept), size=(m, T))

    sd = np.sqrt(hyper.var_log_padding)
    thresh_free = [rng.normal(0.0, sd, size=prob.set_categories[s] - 1)
                   for s in range(prob.n_sets)]

    node_idx = grid.node_index(traits)  # (n, T)
    if prob.shared:
        irf_grid = np.empty((m, prob.grid.n_nodes))
        if prob.sparse:
            ind_nodes = grid.nodes[prob.inducing_idx]
            for j in range(m):
                mu = intercepts[j] + slopes[j] * ind_nodes
                u = mu + prob.inducing_chol @ rng.standard_normal(ind_nodes.size)
                irf_grid[j] = prob.extend_from_inducing(u)
        else:
            occ, _, _ = _occupancy(node_idx.ravel())
            L_occ = _chol_of_occ(prob, occ)
            C_cols = prob.grid_gram[:, occ]
            for j in range(m):
                mu_occ = intercepts[j] + slopes[j] * grid.nodes[occ]
                f_occ = mu_occ + L_occ @ rng.standard_normal(occ.size)
                irf_grid[j] = _pathwise_grid_draw(
                    prob, occ, L_occ, C_cols, f_occ, intercepts[j], slopes[j], rng
                )
    else:
        irf_grid = np.empty((m, T, prob.grid.n_nodes))
        for t in range(T):
            occ, _, _ = _occupancy(node_idx[:, t])
            L_occ = _chol_of_occ(prob, occ)
            C_cols = prob.grid_gram[:, occ]
            for j in range(m):
                mu_occ = intercepts[j, t] + slopes[j, t] * grid.nodes[occ]
                f_occ = mu_occ + L_occ @ rng.standard_normal(occ.size)
                irf_grid[j, t] = _pathwise_grid_draw(
                    prob, occ, L_occ, C_cols, f_occ, intercepts[j, t], slopes[j, t], rng
                )
    f_resp = _refresh_f(prob, irf_grid, node_idx)
    return ChainState(traits=traits, irf_grid=irf_grid, f_resp=f_resp,
                      slopes=slopes, intercepts=intercepts, thresh_free=thresh_free)


def _pathwise_grid_draw(prob: _Problem, occ, L_occ, C_cols, f_occ, intercept, slope,
                        rng: np.random.Generator) -> np.ndarray:
    """Exact draw from the grid GP posterior given function values at occupied nodes."""
    grid_nodes = prob.grid.nodes
    mu_grid = intercept + slope * grid_nodes
    prior_sample = prob.grid_chol @ rng.standard_normal(grid_nodes.shape[0])
    if occ.size == 0:
        return mu_grid + prior_sample
    resid = f_occ - mu_grid[occ] - prior_sample[occ]
    alpha = cho_solve((L_occ, True), resid)
    return mu_grid + prior_sample + C_cols @ alpha


def _refresh_f(prob: _Problem, irf_grid: np.ndarray, node_idx: np.ndarray) -> np.ndarray:
    """f[j, t, i] := grid value at respondent i's node — exact lookup, no interpolation."""
    n, T = node_idx.shape
    if prob.shared:
        # irf_grid: (m, G) -> (m, T, n)
        return irf_grid[:, node_idx.T].copy()
    m = irf_grid.shape[0]
    j_ix = np.arange(m)[:, None, None]
    t_ix = np.arange(T)[None, :, None]
    return irf_grid[j_ix, t_ix, node_idx.T[None, :, :]]


def _set_cuts(state: ChainState, prob: _Problem) -> list[np.ndarray]:
    return [extend_cuts(cuts_from_free(state.thresh_free[s])) for s in range(prob.n_sets)]


def _obs_cut_bounds(prob: _Problem, cuts_ext: list[np.ndarray], items, ys):
    sets = prob.set_of_item[items]
    lo = np.empty(items.shape[0])
    hi = np.empty(items.shape[0])
    for s in range(prob.n_sets):
        mask = sets == s
        if mask.any():
            lo[mask] = cuts_ext[s][ys[mask] - 1]
            hi[mask] = cuts_ext[s][ys[mask]]
    return lo, hi


def _batch_grid_draw(state: ChainState, prob: _Problem, t: int,
                     occ, L_occ, C_cols, f_occ_all, rng) -> None:
    """Pathwise grid draws for every item at one period in a single BLAS pass.

    ``f_occ_all`` is (n_occ, m): column j holds item j's function values at the
    occupied nodes. Equivalent to per-item draws, just batched.
    """
    nodes = prob.grid.nodes
    mu_all = state.intercepts[:, t][None, :] + np.outer(nodes, state.slopes[:, t])
    prior = prob.grid_chol @ rng.standard_normal((nodes.shape[0], f_occ_all.shape[1]))
    if occ.size:
        resid = f_occ_all - mu_all[occ] - prior[occ]
        alpha = cho_solve((L_occ, True), resid)
        vals = mu_all + prior + C_cols @ alpha
    else:
        vals = mu_all + prior
    state.irf_grid[:, t, :] = vals.T


def _batch_grid_draw_shared(state: ChainState, prob: _Problem,
                            occ, L_occ, C_cols, f_occ_all, rng) -> None:
    """Shared-items counterpart of the batched pathwise grid draw."""
    nodes = prob.grid.nodes
    mu_all = state.intercepts[None, :] + np.outer(nodes, state.slopes)
    prior = prob.grid_chol @ rng.standard_normal((nodes.shape[0], f_occ_all.shape[1]))
    if occ.size:
        resid = f_occ_all - mu_all[occ] - prior[occ]
        alpha = cho_solve((L_occ, True), resid)
        vals = mu_all + prior + C_cols @ alpha
    else:
        vals = mu_all + prior
    state.irf_grid[:, :] = vals.T


def _conjugate_f_refresh(F: np.ndarray, mu: np.ndarray, L_occ: np.ndarray,
                         items: np.ndarray, pos_obs: np.ndarray,
                         lo: np.ndarray, hi: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """Exact redraw of occupied-node function values via utility augmentation.

    The ordered-probit likelihood is the margin of a unit-variance Gaussian
    utility z truncated to the observed category's cutpoint interval. Given a
    draw of z for every observation, each item's function values at the
    occupied nodes follow a closed-form Gaussian regression posterior (GP
    prior, unit noise), which is drawn exactly. This extra Gibbs move breaks
    the slice-sampling autocorrelation of the function values.

    ``F`` is (items, n_occ), ``mu`` the affine prior means, ``L_occ`` the
    occupied-node prior Cholesky factor; observations carry their item, node
    position, and shifted cutpoint bounds. Returns the redrawn matrix.
    """
    m, n_occ = F.shape
    if n_occ == 0 or items.size == 0:
        return F
    f_obs = F[items, pos_obs]
    z = f_obs + truncated_standard_normal(lo - f_obs, hi - f_obs, rng)
    s = np.zeros((m, n_occ))
    np.add.at(s, (items, pos_obs), z)
    counts = np.zeros((m, n_occ))
    np.add.at(counts, (items, pos_obs), 1.0)
    K_inv = cho_solve((L_occ, True), np.eye(n_occ))
    rhs = K_inv @ mu.T + s.T  # (n_occ, m)
    xi = rng.standard_normal((n_occ, m))
    if np.all(counts == counts[0]):
        # complete designs observe every node equally often: one factorization
        P = np.linalg.cholesky(K_inv + np.diag(counts[0]))
        mean = cho_solve((P, True), rhs)
        return (mean + solve_triangular(P.T, xi, lower=False)).T
    out = np.empty_like(F)
    for j in range(m):
        P = np.linalg.cholesky(K_inv + np.diag(counts[j]))
        mean = cho_solve((P, True), rhs[:, j])
        out[j] = mean + solve_triangular(P.T, xi[:, j], lower=False)
    return out


def _sample_traits(state: ChainState, prob: _Problem, config: SamplerConfig,
                   flat_irf: np.ndarray, lo_ord: np.ndarray, hi_ord: np.ndarray,
                   rng: np.random.Generator) -> None:
    """Batched ESS sweeps over all respondents' trait paths (independent rows
    given the grid function values), snapped to the grid after each sweep."""
    grid = prob.grid
    node0 = grid.nodes[0]
    spacing = grid.spacing
    top = grid.n_nodes - 1
    obs_resp = prob.resp_ids
    blocks = prob.resp_block
    periods = prob.resp_period
    n, T = prob.n, prob.T

    def loglik_rows(X, active=None):
        if active is None:
            o_resp, o_per, o_blk, o_lo, o_hi = obs_resp, periods, blocks, lo_ord, hi_ord
        else:
            keep = active[obs_resp]
            o_resp, o_per, o_blk = obs_resp[keep], periods[keep], blocks[keep]
            o_lo, o_hi = lo_ord[keep], hi_ord[keep]
        x_obs = X[o_resp, o_per]
        idx = np.clip(np.rint((x_obs - node0) / spacing), 0, top).astype(np.int64)
        f = flat_irf[o_blk, idx]
        vals = log_phi_interval(o_lo - f, o_hi - f)
        return np.bincount(o_resp, weights=vals, minlength=n)

    for _ in range(config.trait_sweeps):
        nu = (prob.time_chol @ rng.standard_normal((T, n))).T
        x_new, _ = ess_step_rows(state.traits, 0.0, nu, loglik_rows, rng)
        state.traits = grid.snap(x_new)

        # One coordinate sweep after each path sweep: single-period values
        # move against the prior conditional on the rest of the path. The
        # 1-d slices take much larger steps than whole-path moves, which the
        # across-period prior correlation keeps small.
        for t in range(T):
            rows = prob.resp_rows_of_period[t]
            t_resp, t_blk = obs_resp[rows], blocks[rows]
            t_lo, t_hi = lo_ord[rows], hi_ord[rows]

            def loglik_t(X, active=None):
                if active is None:
                    o_resp, o_blk, o_lo, o_hi = t_resp, t_blk, t_lo, t_hi
                else:
                    keep = active[t_resp]
                    o_resp, o_blk = t_resp[keep], t_blk[keep]
                    o_lo, o_hi = t_lo[keep], t_hi[keep]
                idx = np.clip(np.rint((X[o_resp, 0] - node0) / spacing),
                              0, top).astype(np.int64)
                f = flat_irf[o_blk, idx]
                vals = log_phi_interval(o_lo - f, o_hi - f)
                return np.bincount(o_resp, weights=vals, minlength=n)

            oth, w, sd = prob.time_cond[t]
            mean = (state.traits[:, oth] @ w)[:, None]
            nu_t = sd * rng.standard_normal((n, 1))
            x_t, _ = ess_step_rows(state.traits[:, t][:, None], mean, nu_t,
                                   loglik_t, rng)
            state.traits[:, t] = grid.snap(x_t[:, 0])


def _flip_respondents(state: ChainState, prob: _Problem, flat_irf: np.ndarray,
                      lo_ord: np.ndarray, hi_ord: np.ndarray,
                      rng: np.random.Generator) -> None:
    """Metropolis proposals negating whole trait paths, one per respondent.

    The trait prior is symmetric about zero and the grid nodes are symmetric,
    so each proposal is its own inverse and the acceptance probability reduces
    to the likelihood ratio. Respondents are independent given the grid
    function values, so all proposals are scored and accepted in one pass.
    These reflection hops let a chain escape modes where a few respondents sit
    on the mirrored side of the latent scale.
    """
    grid = prob.grid
    G = grid.n_nodes
    node_idx = grid.node_index(state.traits)
    idx_obs = node_idx[prob.resp_ids, prob.resp_period]
    cur_f = flat_irf[prob.resp_block, idx_obs]
    new_f = flat_irf[prob.resp_block, (G - 1) - idx_obs]
    gain = (log_phi_interval(lo_ord - new_f, hi_ord - new_f)
            - log_phi_interval(lo_ord - cur_f, hi_ord - cur_f))
    delta = np.bincount(prob.resp_ids, weights=gain, minlength=prob.n)
    accept = np.log1p(-rng.random(prob.n)) < delta
    state.traits[accept] = -state.traits[accept]


def _nudge_respondents(state: ChainState, prob: _Problem, flat_irf: np.ndarray,
                       lo_ord: np.ndarray, hi_ord: np.ndarray, sigma: float,
                       rng: np.random.Generator) -> None:
    """Metropolis proposals translating whole trait paths by grid steps.

    Each respondent's path moves rigidly by a snapped Gaussian step; because
    all entries are grid nodes already, snapping makes the proposal a
    symmetric random step count, so acceptance is the likelihood ratio times
    the Gaussian prior ratio (quadratic in the step, computed in closed form).
    Rigid path translation is the dominant prior direction under a
    long-length-scale time kernel, and moving it directly mixes each
    respondent's overall level far faster than coordinate updates.

    Out-of-grid proposals are rejected. Respondents are independent given the
    grid function values, so all proposals run in one pass.
    """
    grid = prob.grid
    G = grid.n_nodes
    n = prob.n
    node_idx = grid.node_index(state.traits)
    k = np.rint(rng.normal(0.0, sigma / grid.spacing, n)).astype(np.int64)
    new_idx = node_idx + k[:, None]
    ok = (new_idx.min(axis=1) >= 0) & (new_idx.max(axis=1) <= G - 1) & (k != 0)

    idx_obs = node_idx[prob.resp_ids, prob.resp_period]
    new_obs = np.clip(idx_obs + k[prob.resp_ids], 0, G - 1)
    cur_f = flat_irf[prob.resp_block, idx_obs]
    new_f = flat_irf[prob.resp_block, new_obs]
    gain = (log_phi_interval(lo_ord - new_f, hi_ord - new_f)
            - log_phi_interval(lo_ord - cur_f, hi_ord - cur_f))
    delta = np.bincount(prob.resp_ids, weights=gain, minlength=n)

    shift = k * grid.spacing
    level_pull = (state.traits @ prob.time_inv).sum(axis=1)  # 1' K^{-1} x_i
    delta += -(shift * level_pull) - 0.5 * shift * shift * prob.time_inv.sum()
    accept = ok & (np.log1p(-rng.random(n)) < delta)
    state.traits[accept] = grid.nodes[new_idx[accept]]


def _reflect_jump(state: ChainState, prob: _Problem, flat_irf: np.ndarray,
                  lo_ord: np.ndarray, hi_ord: np.ndarray,
                  rng: np.random.Generator) -> None:
    """Mode-exchange move: reflect each trait path, then re-center it.

    A bare reflection x -> -x almost never accepts because the item functions
    are not antisymmetric, so the mirrored path sits off the mirrored mode.
    This move proposes x' = -x + s * 1 with the rigid shift s drawn from the
    posterior restricted to a fixed candidate ladder of grid shifts, letting
    the reflected path land on the mirrored mode's level. The reverse move
    re-derives the same ladder around x, so detailed balance holds with
    acceptance probability min(1, W/V), where W and V are the total candidate
    posterior masses of the forward and reverse ladders (both relative to the
    current state, so normalizing constants cancel). Prior terms along the
    rigid-shift direction are quadratic and computed in closed form.
    """
    grid = prob.grid
    G = grid.n_nodes
    n = prob.n
    spacing = grid.spacing
    # ladder of rigid shifts, ~one trait-scale wide in each direction
    steps = np.arange(-10, 11) * max(int(round(0.1 / spacing)), 1)
    J = steps.shape[0]

    node_idx = grid.node_index(state.traits)
    ref_idx = (G - 1) - node_idx
    pull = (state.traits @ prob.time_inv).sum(axis=1)  # 1' K^{-1} x_i
    opo = prob.time_inv.sum()                          # 1' K^{-1} 1
    idx_cur = node_idx[prob.resp_ids, prob.resp_period]
    idx_ref = ref_idx[prob.resp_ids, prob.resp_period]
    cur_ll = np.bincount(
        prob.resp_ids,
        weights=log_phi_interval(
            lo_ord - flat_irf[prob.resp_block, idx_cur],
            hi_ord - flat_irf[prob.resp_block, idx_cur]),
        minlength=n)

    def ladder_loglik(base_obs: np.ndarray, row_steps: np.ndarray) -> np.ndarray:
        out = np.empty((n, J))
        for j in range(J):
            pos = np.clip(base_obs + row_steps[:, j][prob.resp_ids], 0, G - 1)
            f = flat_irf[prob.resp_block, pos]
            out[:, j] = np.bincount(
                prob.resp_ids,
                weights=log_phi_interval(lo_ord - f, hi_ord - f), minlength=n)
        return out

    # forward ladder: reflected path shifted by each candidate step
    steps_f = np.broadcast_to(steps, (n, J))
    delta_f = steps_f * spacing
    logw = (ladder_loglik(idx_ref, steps_f) - cur_ll[:, None]
            + delta_f * pull[:, None] - 0.5 * delta_f * delta_f * opo)
    lo_n = ref_idx.min(axis=1)
    hi_n = ref_idx.max(axis=1)
    logw[(lo_n[:, None] + steps_f < 0) | (hi_n[:, None] + steps_f > G - 1)] = -np.inf

    jstar = np.argmax(logw + rng.gumbel(size=(n, J)), axis=1)
    picked = steps[jstar]

    # reverse ladder: the same candidate steps applied after reflecting the
    # proposal, which lands on rigid translates of the current path
    steps_r = steps[None, :] - picked[:, None]
    delta_r = steps_r * spacing
    logv = (ladder_loglik(idx_cur, steps_r) - cur_ll[:, None]
            - delta_r * pull[:, None] - 0.5 * delta_r * delta_r * opo)
    lo_c = node_idx.min(axis=1)
    hi_c = node_idx.max(axis=1)
    logv[(lo_c[:, None] + steps_r < 0) | (hi_c[:, None] + steps_r > G - 1)] = -np.inf

    log_ratio = logsumexp(logw, axis=1) - logsumexp(logv, axis=1)
    accept = np.log1p(-rng.random(n)) < log_ratio
    new_idx = ref_idx[accept] + picked[accept][:, None]
    state.traits[accept] = grid.nodes[new_idx]


def _flip_items(state: ChainState, prob: _Problem, lo_all: np.ndarray,
                hi_all: np.ndarray, node_idx: np.ndarray,
                rng: np.random.Generator) -> None:
    """Metropolis proposals mirroring item-block functions: the grid vector is
    index-reversed and the linear-trend slope negated. The GP prior density is
    unchanged under this map (stationary kernel on a symmetric grid, symmetric
    slope prior), so acceptance is the likelihood ratio; blocks are independent
    given the traits, so all proposals run in one pass."""
    G = prob.grid.n_nodes
    d = prob.dataset
    m, T = prob.m, prob.T
    flat_irf = state.irf_grid.reshape(m * T, G)
    blk = d.item * T + d.period
    idx_obs = node_idx[d.respondent, d.period]
    cur_f = flat_irf[blk, idx_obs]
    new_f = flat_irf[blk, (G - 1) - idx_obs]
    gain = (log_phi_interval(lo_all - new_f, hi_all - new_f)
            - log_phi_interval(lo_all - cur_f, hi_all - cur_f))
    delta = np.bincount(blk, weights=gain, minlength=m * T)
    accept = (np.log1p(-rng.random(m * T)) < delta).reshape(m, T)
    state.irf_grid[accept] = state.irf_grid[accept][:, ::-1]
    state.slopes[accept] = -state.slopes[accept]


def _flip_items_shared(state: ChainState, prob: _Problem, lo_all: np.ndarray,
                       hi_all: np.ndarray, node_idx: np.ndarray,
                       rng: np.random.Generator) -> None:
    """Shared-items counterpart of the item mirror proposal (one per item,
    scored against every period's observations)."""
    G = prob.grid.n_nodes
    d = prob.dataset
    idx_obs = node_idx[d.respondent, d.period]
    cur_f = state.irf_grid[d.item, idx_obs]
    new_f = state.irf_grid[d.item, (G - 1) - idx_obs]
    gain = (log_phi_interval(lo_all - new_f, hi_all - new_f)
            - log_phi_interval(lo_all - cur_f, hi_all - cur_f))
    delta = np.bincount(d.item, weights=gain, minlength=prob.m)
    accept = np.log1p(-rng.random(prob.m)) < delta
    state.irf_grid[accept] = state.irf_grid[accept][:, ::-1]
    state.slopes[accept] = -state.slopes[accept]


def _sample_betas(prob: _Problem, config: SamplerConfig, B: np.ndarray,
                  Sw: np.ndarray, Rw: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Exact conjugate draw of every (intercept, slope) row at once.

    Given the function values at the occupied nodes, the whitened model is
    ``Rw[:, j] ~ N(Sw @ beta_j, I)`` with an independent Gaussian prior on
    each beta_j, so the conditional posterior is Gaussian with a precision
    shared by all rows. ``Sw`` is the whitened affine design and ``Rw`` the
    whitened function values, column per item (both already solved against
    the occupied-node Cholesky factor). Returns the new (rows, 2) matrix."""
    prior_prec = np.diag([1.0 / prob.hyper.var_intercept, 1.0 / prob.hyper.var_slope])
    prec = prior_prec + Sw.T @ Sw
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = (Sw.T @ Rw).T @ cov  # (rows, 2)
    A = np.linalg.cholesky(cov)
    return mean + rng.standard_normal(B.shape) @ A.T


def _sample_thresholds(state: ChainState, prob: _Problem, config: SamplerConfig,
                       f_all_obs: np.ndarray, rng: np.random.Generator) -> None:
    """Batched ESS sweeps of the free threshold vectors, grouped by category
    count so equal-width sets update together; each set is scored against all
    observations it governs."""
    d = prob.dataset
    sd = np.sqrt(prob.hyper.var_log_padding)
    for cats, sets, rows, ids in prob.thresh_groups:
        n_rows = sets.size
        width = cats - 1
        y = d.response[rows]
        f = f_all_obs[rows]
        neg = np.full((n_rows, 1), -np.inf)
        posi = np.full((n_rows, 1), np.inf)

        def loglik_rows(V, active=None):
            if width == 1:
                cuts = V
            else:
                cuts = np.concatenate(
                    [V[:, :1], V[:, :1] + np.cumsum(np.exp(V[:, 1:]), axis=1)], axis=1
                )
            ext = np.concatenate([neg, cuts, posi], axis=1)
            if active is None:
                o_ids, o_y, o_f = ids, y, f
            else:
                keep = active[ids]
                o_ids, o_y, o_f = ids[keep], y[keep], f[keep]
            lo = ext[o_ids, o_y - 1]
            hi = ext[o_ids, o_y]
            vals = log_phi_interval(lo - o_f, hi - o_f)
            return np.bincount(o_ids, weights=vals, minlength=n_rows)

        V = np.stack([state.thresh_free[s] for s in sets])
        for _ in range(config.threshold_sweeps):
            nu = sd * rng.standard_normal((n_rows, width))
            V, _ = ess_step_rows(V, 0.0, nu, loglik_rows, rng)
        for a, s in enumerate(sets):
            state.thresh_free[s] = V[a]


def _shift_period(state: ChainState, prob: _Problem, t: int, occ: np.ndarray,
                  first: np.ndarray, L_occ: np.ndarray, A_tr: np.ndarray,
                  rng: np.random.Generator) -> int:
    """Exact orbit draw over whole-period trait translations.

    Moving every respondent's period-``t`` trait by the same number of grid
    steps, while each occupied node carries its function values along, changes
    no observation's function value and hence no likelihood term. On the
    uniform grid with stationary kernels the translated occupied-node Gram is
    unchanged too, so only the trait prior and the affine GP means see the
    move, making the log-density quadratic in the step count: the conditional
    over all in-grid translations is a discretized Gaussian, sampled exactly.
    This direction is the x-axis counterpart of the item-level ridge and is
    otherwise explored by a slow coordinate-at-a-time random walk.

    ``A_tr`` holds x_i' K_time^{-1} per respondent row. Returns the sampled
    step count; the caller applies it to the traits and redraws the period's
    grid values.
    """
    spacing = prob.grid.spacing
    nodes = prob.grid.nodes
    f_occ = state.f_resp[:, t, first]  # (m, n_occ)
    b = state.slopes[:, t]
    mu_occ = state.intercepts[:, t][:, None] + np.outer(b, nodes[occ])
    resid = f_occ - mu_occ
    ones = np.ones(occ.size)
    u = cho_solve((L_occ, True), ones)
    lin = spacing * (float(b @ (resid @ u)) - float(A_tr[:, t].sum()))
    quad = spacing ** 2 * (prob.n * prob.time_inv[t, t]
                           + float(b @ b) * float(ones @ u))
    s_vals = np.arange(-int(occ[0]), prob.grid.n_nodes - int(occ[-1]))
    logw = lin * s_vals - 0.5 * quad * s_vals.astype(float) ** 2
    w = np.exp(logw - logw.max())
    return int(rng.choice(s_vals, p=w / w.sum()))


def _shift_global(state: ChainState, prob: _Problem, node_idx: np.ndarray,
                  rng: np.random.Generator) -> None:
    """Exact orbit draw over translations of every trait at every period.

    The same argument as the per-period translation applies when all periods
    move together: function values ride along on the occupied nodes, so the
    likelihood is untouched and the conditional over in-grid step counts is a
    discretized Gaussian from the trait prior and the affine GP means. The
    per-period move leaves this direction slow because the time kernel ties
    each period tightly to its neighbours — the overall level of the latent
    scale can only creep — whereas here it is resampled exactly. Applies the
    draw in place (traits, ``node_idx``, and redrawn grid values).
    """
    grid = prob.grid
    spacing = grid.spacing
    nodes = grid.nodes
    T = prob.T
    lin = -float((state.traits @ prob.time_inv).sum())
    quad = prob.n * float(prob.time_inv.sum())
    lo_s, hi_s = -grid.n_nodes, grid.n_nodes
    per_t = []
    for t in range(T):
        occ, first, _ = _occupancy(node_idx[:, t])
        if occ.size == 0:
            per_t.append(None)
            continue
        L_occ = _chol_of_occ(prob, occ)
        b = state.slopes[:, t]
        f_occ = state.f_resp[:, t, first]
        resid = f_occ - (state.intercepts[:, t][:, None] + np.outer(b, nodes[occ]))
        ones = np.ones(occ.size)
        u = cho_solve((L_occ, True), ones)
        lin += float(b @ (resid @ u))
        quad += float(b @ b) * float(ones @ u)
        per_t.append((occ, first, L_occ))
        lo_s = max(lo_s, -int(occ[0]))
        hi_s = min(hi_s, grid.n_nodes - 1 - int(occ[-1]))
    if hi_s < lo_s:
        return
    s_vals = np.arange(lo_s, hi_s + 1)
    logw = (spacing * lin) * s_vals - 0.5 * (spacing ** 2 * quad) * s_vals.astype(float) ** 2
    w = np.exp(logw - logw.max())
    s = int(rng.choice(s_vals, p=w / w.sum()))
    if s == 0:
        return
    node_idx += s
    state.traits[:] = nodes[node_idx]
    for t in range(T):
        if per_t[t] is None:
            continue
        occ, first, L_occ = per_t[t]
        occ = occ + s
        _batch_grid_draw(state, prob, t, occ, L_occ, prob.grid_gram[:, occ],
                         state.f_resp[:, t, first].T.copy(), rng)


def _shift_levels(state: ChainState, prob: _Problem, rng: np.random.Generator) -> None:
    """Exact Gibbs draw along the likelihood-invariant level direction.

    Adding a constant to all of an item's function values (through its
    intercepts) while shifting its thresholds by the same constant changes no
    category probability: the likelihood only sees cutpoint-minus-function
    differences. That direction is therefore identified by the priors alone,
    and since the intercept and first-cutpoint priors are Gaussian, its
    conditional posterior is Gaussian and can be sampled directly. Without
    this move the sampler random-walks along the ridge one coordinate at a
    time, which dominates the autocorrelation of the function levels.
    """
    v_a = prob.hyper.var_intercept
    v_b = prob.hyper.var_log_padding
    for s in range(prob.n_sets):
        items = np.nonzero(prob.set_of_item == s)[0]
        n_a = items.size * (1 if prob.shared else prob.T)
        a_sum = float(state.intercepts[items].sum())
        prec = n_a / v_a + 1.0 / v_b
        mean = -(a_sum / v_a + float(state.thresh_free[s][0]) / v_b) / prec
        c = mean + rng.standard_normal() / np.sqrt(prec)
        state.intercepts[items] += c
        state.irf_grid[items] += c
        state.f_resp[items] += c
        state.thresh_free[s] = state.thresh_free[s].copy()
        state.thresh_free[s][0] += c


def _run_chain(dataset: ResponseDataset, hyper: HyperParams, config: SamplerConfig,
               chain: int, sparse: bool | None = None):
    grid = DenseGrid.from_hyper(hyper)
    prob = _Problem(dataset, hyper, grid, sparse=sparse)
    rng_init = substream(config.seed, chain, _PHASE_INIT)
    state = initialize_chain(dataset, hyper, grid, rng_init, prob=prob)

    n_kept = config.n_kept
    n, m, T, G = prob.n, prob.m, prob.T, grid.n_nodes
    kept_traits = np.empty((n_kept, n, T))
    kept_irf = np.empty((n_kept,) + state.irf_grid.shape, dtype=np.float32)
    kept_slopes = np.empty((n_kept,) + state.slopes.shape)
    kept_intercepts = np.empty((n_kept,) + state.slopes.shape)
    kept_cuts = [np.empty((n_kept, prob.set_categories[s] - 1)) for s in range(prob.n_sets)]

    total = config.burn_in + config.n_iterations
    kept = 0
    for k in range(total):
        if prob.shared:
            _iterate_shared(state, prob, config, chain, k)
        else:
            _iterate(state, prob, config, chain, k)
        if k >= config.burn_in and (k - config.burn_in + 1) % config.thin == 0:
            kept_traits[kept] = state.traits
            kept_irf[kept] = state.irf_grid
            kept_slopes[kept] = state.slopes
            kept_intercepts[kept] = state.intercepts
            for s in range(prob.n_sets):
                kept_cuts[s][kept] = cuts_from_free(state.thresh_free[s])
            kept += 1
    return kept_traits, kept_irf, kept_slopes, kept_intercepts, kept_cuts


def _iterate(state: ChainState, prob: _Problem, config: SamplerConfig,
             chain: int, k: int) -> None:
    grid = prob.grid
    n, m, T = prob.n, prob.m, prob.T
    seed = config.seed
    cuts_ext = _set_cuts(state, prob)

    d = prob.dataset
    nodes = grid.nodes

    rng_f = substream(seed, chain, _PHASE_IRF, k)
    rng_g = substream(seed, chain, _PHASE_GRID, k)
    node_idx = grid.node_index(state.traits)
    for t in range(T):
        occ, first, pos = _occupancy(node_idx[:, t])
        L_occ = _chol_of_occ(prob, occ)
        C_cols = prob.grid_gram[:, occ]
        items_t = prob.period_item[t]
        pos_obs = pos[prob.period_resp[t]]
        lo_t, hi_t = _obs_cut_bounds(prob, cuts_ext, items_t, prob.period_y[t])
        mu = state.intercepts[:, t][:, None] + np.outer(state.slopes[:, t], nodes[occ])
        F = state.f_resp[:, t][:, first]  # (m, n_occ)

        def loglik_rows(X, active=None):
            if active is None:
                o_items, o_pos, o_lo, o_hi = items_t, pos_obs, lo_t, hi_t
            else:
                keep = active[items_t]
                o_items, o_pos = items_t[keep], pos_obs[keep]
                o_lo, o_hi = lo_t[keep], hi_t[keep]
            fv = X[o_items, o_pos]
            vals = log_phi_interval(o_lo - fv, o_hi - fv)
            return np.bincount(o_items, weights=vals, minlength=m)

        for _ in range(config.function_sweeps):
            nu = (L_occ @ rng_f.standard_normal((occ.size, m))).T
            F, _ = ess_step_rows(F, mu, nu, loglik_rows, rng_f)
        F = _conjugate_f_refresh(F, mu, L_occ, items_t, pos_obs, lo_t, hi_t, rng_f)
        state.f_resp[:, t, :] = F[:, pos]
        _batch_grid_draw(state, prob, t, occ, L_occ, C_cols, F.T, rng_g)

    flat_irf = state.irf_grid.reshape(m * T, grid.n_nodes)
    lo_all, hi_all = _obs_cut_bounds(prob, cuts_ext, d.item, d.response)
    lo_ord = lo_all[prob.obs_by_resp_order]
    hi_ord = hi_all[prob.obs_by_resp_order]
    rng_x = substream(seed, chain, _PHASE_TRAIT, k)
    _sample_traits(state, prob, config, flat_irf, lo_ord, hi_ord, rng_x)

    rng_flip = substream(seed, chain, _PHASE_FLIP, k)
    if config.flip_moves:
        # several rounds: sign-ambiguous respondents exchange their mirrored
        # modes only through these hops, so extra attempts cut the
        # autocorrelation of exactly the slowest trait coordinates
        _flip_respondents(state, prob, flat_irf, lo_ord, hi_ord, rng_flip)
        if k % 2 == 0:
            _reflect_jump(state, prob, flat_irf, lo_ord, hi_ord, rng_flip)
        for _ in range(2):
            _nudge_respondents(state, prob, flat_irf, lo_ord, hi_ord, 0.5, rng_flip)

    node_idx = grid.node_index(state.traits)
    if config.flip_moves:
        _flip_items(state, prob, lo_all, hi_all, node_idx, rng_flip)
    state.f_resp = _refresh_f(prob, state.irf_grid, node_idx)

    rng_b = substream(seed, chain, _PHASE_BETA, k)
    rng_s = substream(seed, chain, _PHASE_SHIFT, k)
    _shift_global(state, prob, node_idx, rng_s)
    # row i of A_tr is x_i' K_time^{-1}; kept current across period shifts
    A_tr = state.traits @ prob.time_inv
    for t in range(T):
        occ, first, _ = _occupancy(node_idx[:, t])
        L_occ = _chol_of_occ(prob, occ)
        shifted = 0
        if occ.size:
            shifted = _shift_period(state, prob, t, occ, first, L_occ, A_tr, rng_s)
            if shifted:
                node_idx[:, t] += shifted
                state.traits[:, t] = nodes[node_idx[:, t]]
                A_tr += (shifted * grid.spacing) * prob.time_inv[t][None, :]
                occ = occ + shifted
        design = np.column_stack([np.ones(occ.size), nodes[occ]])
        Sw = solve_triangular(L_occ, design, lower=True)
        Rw = solve_triangular(L_occ, state.f_resp[:, t, first].T, lower=True)
        B = np.column_stack([state.intercepts[:, t], state.slopes[:, t]])
        B = _sample_betas(prob, config, B, Sw, Rw, rng_b)
        state.intercepts[:, t] = B[:, 0]
        state.slopes[:, t] = B[:, 1]
        if shifted:
            # grid values are recorded state: redraw this period's grids so
            # they agree with the translated traits and the new coefficients
            _batch_grid_draw(state, prob, t, occ, L_occ, prob.grid_gram[:, occ],
                             state.f_resp[:, t, first].T.copy(), rng_s)

    f_all_obs = state.f_resp[d.item, d.period, d.respondent]
    _sample_thresholds(state, prob, config, f_all_obs,
                       substream(seed, chain, _PHASE_THRESH, k))
    _shift_levels(state, prob, substream(seed, chain, _PHASE_LEVEL, k))


def _iterate_shared(state: ChainState, prob: _Problem, config: SamplerConfig,
                    chain: int, k: int) -> None:
    grid = prob.grid
    n, m, T = prob.n, prob.m, prob.T
    seed = config.seed
    d = prob.dataset
    cuts_ext = _set_cuts(state, prob)

    node_idx = grid.node_index(state.traits)  # (n, T)
    item_ids = d.item[prob.obs_by_item_order]
    rng_f = substream(seed, chain, _PHASE_IRF, k)
    if prob.sparse:
        _shared_irf_sparse(state, prob, config, node_idx, cuts_ext, item_ids, rng_f)
    else:
        occ, _, pos_flat = _occupancy(node_idx.ravel())
        pos_it = pos_flat.reshape(n, T)
        L_occ = _chol_of_occ(prob, occ)
        C_cols = prob.grid_gram[:, occ]
        rows = prob.obs_by_item_order
        obs_pos = pos_it[d.respondent[rows], d.period[rows]]
        lo_b, hi_b = _obs_cut_bounds(prob, cuts_ext, item_ids, d.response[rows])
        mu = state.intercepts[:, None] + np.outer(state.slopes, grid.nodes[occ])
        F = state.irf_grid[:, occ]

        def loglik_rows(X, active=None):
            if active is None:
                o_items, o_pos, o_lo, o_hi = item_ids, obs_pos, lo_b, hi_b
            else:
                keep = active[item_ids]
                o_items, o_pos = item_ids[keep], obs_pos[keep]
                o_lo, o_hi = lo_b[keep], hi_b[keep]
            fv = X[o_items, o_pos]
            vals = log_phi_interval(o_lo - fv, o_hi - fv)
            return np.bincount(o_items, weights=vals, minlength=m)

        rng_g = substream(seed, chain, _PHASE_GRID, k)
        for _ in range(config.function_sweeps):
            nu = (L_occ @ rng_f.standard_normal((occ.size, m))).T
            F, _ = ess_step_rows(F, mu, nu, loglik_rows, rng_f)
        _batch_grid_draw_shared(state, prob, occ, L_occ, C_cols, F.T, rng_g)

    flat_irf = state.irf_grid  # (m, G)
    lo_all, hi_all = _obs_cut_bounds(prob, cuts_ext, d.item, d.response)
    lo_ord = lo_all[prob.obs_by_resp_order]
    hi_ord = hi_all[prob.obs_by_resp_order]
    rng_x = substream(seed, chain, _PHASE_TRAIT, k)
    _sample_traits(state, prob, config, flat_irf, lo_ord, hi_ord, rng_x)

    rng_flip = substream(seed, chain, _PHASE_FLIP, k)
    if config.flip_moves:
        _flip_respondents(state, prob, flat_irf, lo_ord, hi_ord, rng_flip)
        if k % 2 == 0:
            _reflect_jump(state, prob, flat_irf, lo_ord, hi_ord, rng_flip)
        for _ in range(2):
            _nudge_respondents(state, prob, flat_irf, lo_ord, hi_ord, 0.5, rng_flip)

    node_idx = grid.node_index(state.traits)
    if config.flip_moves:
        _flip_items_shared(state, prob, lo_all, hi_all, node_idx, rng_flip)
    state.f_resp = _refresh_f(prob, state.irf_grid, node_idx)

    # Slope/intercept per item against the occupied-node function values.
    if prob.sparse:
        occ_b = prob.inducing_idx
        L_b = prob.inducing_chol
    else:
        occ_b, _, _ = _occupancy(node_idx.ravel())
        L_b = _chol_of_occ(prob, occ_b)
    design = np.column_stack([np.ones(occ_b.size), grid.nodes[occ_b]])
    Sw = solve_triangular(L_b, design, lower=True)
    Rw = solve_triangular(L_b, state.irf_grid[:, occ_b].T, lower=True)
    rng_b = substream(seed, chain, _PHASE_BETA, k)
    B = np.column_stack([state.intercepts, state.slopes])
    B = _sample_betas(prob, config, B, Sw, Rw, rng_b)
    state.intercepts = B[:, 0].copy()
    state.slopes = B[:, 1].copy()

    f_all_obs = state.f_resp[d.item, d.period, d.respondent]
    _sample_thresholds(state, prob, config, f_all_obs,
                       substream(seed, chain, _PHASE_THRESH, k))
    _shift_levels(state, prob, substream(seed, chain, _PHASE_LEVEL, k))


def _shared_irf_sparse(state: ChainState, prob: _Problem, config: SamplerConfig,
                       node_idx: np.ndarray, cuts_ext, item_ids: np.ndarray,
                       rng_f: np.random.Generator) -> None:
    """Sparse inducing-point IRF update: batched ESS on the inducing vectors of
    all items, grid values extended by kNN inverse-distance weights."""
    grid = prob.grid
    d = prob.dataset
    m = prob.m
    ind_idx = prob.inducing_idx
    rows = prob.obs_by_item_order
    obs_nodes = node_idx[d.respondent[rows], d.period[rows]]
    lo_b, hi_b = _obs_cut_bounds(prob, cuts_ext, item_ids, d.response[rows])
    mu = state.intercepts[:, None] + np.outer(state.slopes, grid.nodes[ind_idx])
    U = state.irf_grid[:, ind_idx]
    knn_pos = prob.knn_pos
    knn_w = prob.knn_w

    def loglik_rows(Um, active=None):
        f_grid = np.einsum("gk,rgk->rg", knn_w, Um[:, knn_pos])
        if active is None:
            o_items, o_nodes, o_lo, o_hi = item_ids, obs_nodes, lo_b, hi_b
        else:
            keep = active[item_ids]
            o_items, o_nodes = item_ids[keep], obs_nodes[keep]
            o_lo, o_hi = lo_b[keep], hi_b[keep]
        fv = f_grid[o_items, o_nodes]
        vals = log_phi_interval(o_lo - fv, o_hi - fv)
        return np.bincount(o_items, weights=vals, minlength=m)

    for _ in range(config.function_sweeps):
        nu = (prob.inducing_chol @ rng_f.standard_normal((ind_idx.size, m))).T
        U, _ = ess_step_rows(U, mu, nu, loglik_rows, rng_f)
    state.irf_grid = np.einsum("gk,rgk->rg", knn_w, U[:, knn_pos])


def run(dataset: ResponseDataset, hyper: HyperParams, config: SamplerConfig,
        sparse: bool | None = None) -> PosteriorSamples:
    """Run the full multi-chain sampler and return thinned posterior draws."""
    grid = DenseGrid.from_hyper(hyper)
    prob = _Problem(dataset, hyper, grid, sparse=sparse)  # validates up front

    results = []
    if config.threads > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.n_chains)) as pool:
            futures = [pool.submit(_run_chain, dataset, hyper, config, c, sparse)
                       for c in range(config.n_chains)]
            results = [f.result() for f in futures]
    else:
        for c in range(config.n_chains):
            results.append(_run_chain(dataset, hyper, config, c, sparse))

    traits = np.stack([r[0] for r in results])
    irf = np.stack([r[1] for r in results])
    slopes = np.stack([r[2] for r in results])
    intercepts = np.stack([r[3] for r in results])
    thresholds = [np.stack([r[4][s] for r in results]) for s in range(prob.n_sets)]
    return PosteriorSamples(
        traits=traits, irf_grid=irf, slopes=slopes, intercepts=intercepts,
        thresholds=thresholds, set_of_item=prob.set_of_item,
        categories_per_item=dataset.categories_per_item, grid_nodes=grid.nodes,
        shared_items=prob.shared, hyper=hyper, config=config,
    )


def align_signs(samples: PosteriorSamples) -> PosteriorSamples:
    """Resolve reflection non-identifiability across chains.

    Chains whose mean trait matrix correlates negatively with chain 0's are
    reflected: traits and slopes are negated and grid function vectors are
    index-reversed (f(x) -> f(-x)); the data likelihood of every draw is
    unchanged because the grid is symmetric.
    """
    traits = samples.traits.copy()
    slopes = samples.slopes.copy()
    irf = samples.irf_grid.copy()
    ref = traits[0].mean(axis=0).ravel()
    for c in range(1, traits.shape[0]):
        cur = traits[c].mean(axis=0).ravel()
        denom = np.linalg.norm(ref - ref.mean()) * np.linalg.norm(cur - cur.mean())
        corr = 0.0 if denom == 0 else float(
            (ref - ref.mean()) @ (cur - cur.mean()) / denom
        )
        if corr < 0:
            traits[c] = -traits[c]
            slopes[c] = -slopes[c]
            irf[c] = irf[c][..., ::-1]
    return replace(samples, traits=traits, slopes=slopes, irf_grid=irf)


def _draw_cuts(samples: PosteriorSamples, chain: int, k: int) -> list[np.ndarray]:
    return [extend_cuts(samples.thresholds[s][chain, k])
            for s in range(len(samples.thresholds))]


def predict_responses(samples: PosteriorSamples, targets: np.ndarray,
                      true_responses: np.ndarray | None = None):
    """Posterior-predictive category distributions for (i, j, t) targets.

    Returns (probs, point, mean_loglik): ``probs`` is (n_targets, max_C) with
    NaN padding beyond each item's category count, ``point`` the argmax
    category (1-based), and ``mean_loglik`` the average log posterior-predictive
    probability of ``true_responses`` (None when not provided).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 2 or targets.shape[1] != 3 or targets.shape[0] == 0:
        raise ValueError("targets must be a non-empty (N, 3) array of (i, j, t)")
    i_t, j_t, t_t = targets[:, 0], targets[:, 1], targets[:, 2]
    n_chains, n_kept = samples.n_chains, samples.n_kept
    n, T = samples.traits.shape[2], samples.traits.shape[3]
    if (i_t.min() < 0 or i_t.max() >= n or j_t.min() < 0
            or j_t.max() >= samples.categories_per_item.shape[0]
            or t_t.min() < 0 or t_t.max() >= T):
        raise IndexError("prediction target outside the fitted index ranges")

    nodes = samples.grid_nodes
    spacing = nodes[1] - nodes[0]
    c_of = samples.categories_per_item[j_t]
    max_c = int(samples.categories_per_item.max())
    acc = np.zeros((targets.shape[0], max_c))
    sets = samples.set_of_item[j_t]

    for chain in range(n_chains):
        for k in range(n_kept):
            x = samples.traits[chain, k, i_t, t_t]
            idx = np.clip(np.rint((x - nodes[0]) / spacing), 0, nodes.shape[0] - 1).astype(np.int64)
            if samples.shared_items:
                f = samples.irf_grid[chain, k, j_t, idx].astype(float)
            else:
                f = samples.irf_grid[chain, k, j_t, t_t, idx].astype(float)
            cuts_ext = _draw_cuts(samples, chain, k)
            for s in range(len(cuts_ext)):
                mask = sets == s
                if mask.any():
                    p = all_category_probs(f[mask], cuts_ext[s])
                    acc[np.ix_(mask.nonzero()[0], range(p.shape[1]))] += p
    probs = acc / (n_chains * n_kept)
    probs[np.arange(max_c)[None, :] >= c_of[:, None]] = np.nan
    point = np.argmax(np.where(np.isnan(probs), -np.inf, probs), axis=1) + 1
    mean_ll = None
    if true_responses is not None:
        y = np.asarray(true_responses, dtype=np.int64)
        p_true = probs[np.arange(y.shape[0]), y - 1]
        mean_ll = float(np.mean(np.log(np.maximum(p_true, 1e-300))))
    return probs, point, mean_ll


def forecast_traits(samples: PosteriorSamples, horizons) -> dict[int, tuple[np.ndarray, float]]:
    """Draw-wise GP extrapolation of trait paths to future periods.

    Returns {horizon (1-based period): (means (chains, K, n), variance)} where
    the conditional variance is common to all draws. Horizons must exceed the
    fitted number of periods; the Static kernel cannot extrapolate.
    """
    hyper = samples.hyper
    if hyper.time_kernel == "static":
        raise ValueError("the static time kernel has no forecasting distribution")
    T = samples.traits.shape[3]
    horizons = [int(h) for h in np.atleast_1d(horizons)]
    for h in horizons:
        if h <= T:
            raise ValueError(f"horizon {h} must exceed the fitted period count {T}")
    train = np.arange(1, T + 1)
    K_tt = trait_kernel_matrix(hyper, train, train) + hyper.jitter * np.eye(T)
    L = stable_cholesky(K_tt, hyper.jitter, context="forecast time Gram")
    out: dict[int, tuple[np.ndarray, float]] = {}
    for h in horizons:
        k_h = trait_kernel_matrix(hyper, [h], train)[0]
        w = cho_solve((L, True), k_h)
        means = samples.traits @ w  # (chains, K, n)
        prior_var = trait_kernel_matrix(hyper, [h], [h])[0, 0]
        var = float(prior_var - k_h @ w)
        out[h] = (means, max(var, 0.0))
    return out


def forecast_responses(samples: PosteriorSamples, horizons, items=None,
                       ) -> dict[int, np.ndarray]:
    """Per-horizon predictive category distributions for every (respondent, item).

    Each kept draw's path is extrapolated to the horizon, the conditional mean
    is snapped to the grid, and the final fitted period's (or shared) IRFs and
    that draw's thresholds give the category probabilities; distributions are
    averaged over draws. Returns {horizon: probs (n, n_items, max_C)}.
    """
    n_chains, n_kept = samples.n_chains, samples.n_kept
    n = samples.traits.shape[2]
    m = samples.categories_per_item.shape[0]
    items = np.arange(m) if items is None else np.asarray(items, dtype=np.int64)
    nodes = samples.grid_nodes
    spacing = nodes[1] - nodes[0]
    max_c = int(samples.categories_per_item.max())
    extrap = forecast_traits(samples, horizons)
    out = {}
    for h, (means, _var) in extrap.items():
        acc = np.zeros((n, items.shape[0], max_c))
        for chain in range(n_chains):
            for k in range(n_kept):
                idx = np.clip(np.rint((means[chain, k] - nodes[0]) / spacing),
                              0, nodes.shape[0] - 1).astype(np.int64)
                cuts_ext = _draw_cuts(samples, chain, k)
                for a, j in enumerate(items):
                    if samples.shared_items:
                        f = samples.irf_grid[chain, k, j, idx].astype(float)
                    else:
                        f = samples.irf_grid[chain, k, j, -1, idx].astype(float)
                    cuts = cuts_ext[samples.set_of_item[j]]
                    p = all_category_probs(f, cuts)
                    acc[:, a, : p.shape[1]] += p
        acc /= n_chains * n_kept
        for a, j in enumerate(items):
            acc[:, a, samples.categories_per_item[j]:] = np.nan
        out[h] = acc
    return out
