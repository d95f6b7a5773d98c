"""
Entry-wise spike-and-slab CONCORD Gibbs sampler

Off-diagonal entries get a point mass at zero mixed with a normal slab, the
diagonal entries an exponential prior; the likelihood is the CONCORD
generalized likelihood exp{n*sum(log w_jj) - (n/2) tr(Omega^2 S)}.
"""

import logging
import time
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

import gibbs_kernels
from async_utils import run_blocking_tasks
from config import SpikeSlabConfig
from data_models import (
    ChainTrace,
    DiagMode,
    PairIndex,
    PosteriorSummary,
    PrecisionState,
    SampleCovariance,
    SparsityPattern,
    pair_indices,
)
from errors import DimensionMismatchError, InternalInvariantError, InvalidCovarianceError
from rng import chain_stream, seeded_rng

logger = logging.getLogger(__name__)

DIAG_GRID_POINTS = 512
DIAG_GRID_SPAN = 8.0


def _check_dims(state: PrecisionState, S: SampleCovariance):
    if state.p != S.p:
        raise DimensionMismatchError(f"state is {state.p}x{state.p} but S is {S.p}x{S.p}")


def offdiag_conditional(state: PrecisionState, S: SampleCovariance, cfg: SpikeSlabConfig,
                        pair: PairIndex, n: int) -> Tuple[float, float, float]:
    """
    Full conditional of one off-diagonal entry.

    Returns (p_jk, mean, var): the entry is zero with probability 1 - p_jk,
    otherwise N(mean, var).
    """
    _check_dims(state, S)
    s = S.entries
    j, k = pair.j, pair.k
    lam = cfg.lambda_vector(state.p)[pair.flat]
    omega = state.dense()

    a = s[j, j] + s[k, k] + lam / n
    if not a > 0:
        raise InternalInvariantError(f"a_jk={a} for pair ({j}, {k}) is not positive")
    row_j = omega[j] @ s[:, k] - omega[j, k] * s[k, k]
    row_k = omega[k] @ s[:, j] - omega[k, j] * s[j, j]
    b = row_j + row_k

    log_c = (np.log(cfg.q) - np.log1p(-cfg.q) + 0.5 * np.log(lam)
             - 0.5 * np.log(n * a) + n * b * b / (2.0 * a))
    p_jk = float(inclusion_probability(log_c))
    return p_jk, float(-b / a), float(1.0 / (n * a))


def inclusion_probability(log_c):
    """p = c / (1 + c) from log c, finite for any finite log c"""
    log_c = np.asarray(log_c, dtype=float)
    return np.exp(log_c - np.logaddexp(0.0, log_c))


def _draw_shrinkage(offdiag: np.ndarray, diag: np.ndarray, r: float, s: float, rng: np.random.Generator):
    """lambda_jk ~ Gamma(r + 1/2, w_jk^2/2 + s), gamma_j ~ Gamma(r + 1, w_jj + s), rate form"""
    lam = rng.gamma(r + 0.5, 1.0 / (0.5 * offdiag * offdiag + s))
    gamma = rng.gamma(r + 1.0, 1.0 / (diag + s))
    return lam, gamma


def diag_linear(omega: np.ndarray, W: np.ndarray, s_diag: np.ndarray, gamma: np.ndarray, n: int) -> np.ndarray:
    """gamma_j + n*b_j with b_j = sum_{j' != j} w_jj' s_jj'"""
    b = np.diag(W) - np.diag(omega) * s_diag
    return gamma + n * b


def discretized_draw(s_diag: np.ndarray, linear: np.ndarray, n: int, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw from the diagonal conditional on a log-spaced grid around its mode"""
    mode = gibbs_kernels.diag_mode(s_diag, linear, n)
    offsets = np.linspace(-np.log(DIAG_GRID_SPAN), np.log(DIAG_GRID_SPAN), DIAG_GRID_POINTS)
    grid = mode[:, None] * np.exp(offsets)[None, :]
    # cell width on the log grid is proportional to w
    log_weight = ((n + 1) * np.log(grid)
                  - 0.5 * n * s_diag[:, None] * grid ** 2
                  - linear[:, None] * grid)
    log_weight -= logsumexp(log_weight, axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(log_weight), axis=1)
    pick = np.minimum((cdf < (u * cdf[:, -1])[:, None]).sum(axis=1), DIAG_GRID_POINTS - 1)
    return grid[np.arange(grid.shape[0]), pick]


def diag_update(state: PrecisionState, S: SampleCovariance, cfg: SpikeSlabConfig, j: int, n: int,
                rng: Optional[np.random.Generator] = None) -> float:
    """
    New value of the j-th diagonal entry.

    The conditional log-density is n log w - (n/2) s_jj w^2 - (gamma_j + n b_j) w.
    Point-mass mode returns its unique maximizer; discretized mode draws from it.
    """
    _check_dims(state, S)
    s_jj = float(S.entries[j, j])
    if not s_jj > 0:
        raise InvalidCovarianceError(f"s_jj must be positive, got {s_jj} for j={j}")
    omega = state.dense()
    b_j = float(omega[j] @ S.entries[j] - omega[j, j] * s_jj)
    linear = np.array([cfg.gamma_vector(state.p)[j] + n * b_j])
    s_arr = np.array([s_jj])
    if cfg.diag_mode is DiagMode.DISCRETIZED:
        if rng is None:
            raise ValueError("discretized diagonal updates need an rng")
        return float(discretized_draw(s_arr, linear, n, rng.random(1))[0])
    if cfg.diag_mode is DiagMode.FIXED:
        return float(state.diag[j])
    return float(gibbs_kernels.diag_mode(s_arr, linear, n)[0])


class SpikeSlabChain:
    """Dense working state of one chain: Omega, W = Omega S and the shrinkage parameters"""

    def __init__(self, S: SampleCovariance, n: int, cfg: SpikeSlabConfig, init: Optional[PrecisionState] = None):
        self.S = S
        self.n = n
        self.cfg = cfg
        self.p = S.p
        self.logger = logging.getLogger(f"{__name__}.SpikeSlabChain")

        init = init if init is not None else PrecisionState.identity(self.p)
        _check_dims(init, S)
        if not np.all(S.diagonal > 0):
            raise InvalidCovarianceError("sample covariance diagonal must be positive")

        self.s = np.ascontiguousarray(S.entries, dtype=float)
        self.s_diag = np.diag(self.s).copy()
        self.rows, self.cols = (np.ascontiguousarray(a, dtype=np.int64) for a in pair_indices(self.p))
        self.omega = init.dense()
        self.W = self.omega @ self.s
        self.lam = cfg.lambda_vector(self.p)
        self.gamma = cfg.gamma_vector(self.p)
        self.cap = cfg.tau_cap(self.p)
        self.density = int(np.count_nonzero(init.offdiag))
        self.prior_log_odds = float(np.log(cfg.q) - np.log1p(-cfg.q))
        self.logger.debug(f"Chain state ready: p={self.p}, density={self.density}, cap={self.cap}")

    def state(self) -> PrecisionState:
        return PrecisionState(p=self.p, diag=np.diag(self.omega).copy(),
                              offdiag=self.omega[self.rows, self.cols].copy())

    def sweep(self, rng: np.random.Generator):
        m = self.rows.shape[0]
        u = rng.random(m)
        z = rng.standard_normal(m)
        self.W = self.omega @ self.s

        density = gibbs_kernels.offdiag_pass(
            self.omega, self.W, self.s, self.n, self.rows, self.cols,
            self.lam / self.n, self.prior_log_odds + 0.5 * np.log(self.lam),
            True, self.cap, self.density, u, z,
        )
        if density == gibbs_kernels.INVALID_PRECISION:
            raise InternalInvariantError("non-positive a_jk met during the off-diagonal pass")
        self.density = density

        if self.cfg.diag_mode is not DiagMode.FIXED:
            linear = diag_linear(self.omega, self.W, self.s_diag, self.gamma, self.n)
            if self.cfg.diag_mode is DiagMode.DISCRETIZED:
                new_diag = discretized_draw(self.s_diag, linear, self.n, rng.random(self.p))
            else:
                new_diag = gibbs_kernels.diag_mode(self.s_diag, linear, self.n)
            np.fill_diagonal(self.omega, new_diag)

        if self.cfg.hyper is not None:
            self._update_shrinkage(rng)

    def _update_shrinkage(self, rng: np.random.Generator):
        self.lam, self.gamma = _draw_shrinkage(
            self.omega[self.rows, self.cols], np.diag(self.omega), self.cfg.hyper.r, self.cfg.hyper.s, rng
        )


def sweep(state: PrecisionState, S: SampleCovariance, cfg: SpikeSlabConfig, n: int,
          rng: np.random.Generator) -> PrecisionState:
    """One full Gibbs sweep: all pairs in canonical order, then all diagonals"""
    chain = SpikeSlabChain(S, n, cfg.model_copy(update={'hyper': None}), init=state)
    chain.sweep(rng)
    return chain.state()


def update_hyperparameters(state: PrecisionState, cfg: SpikeSlabConfig,
                           rng: np.random.Generator) -> SpikeSlabConfig:
    """Draw lambda_jk and gamma_j from their Gamma full conditionals"""
    if cfg.hyper is None:
        raise ValueError("hyperparameter updates need cfg.hyper")
    lam, gamma = _draw_shrinkage(state.offdiag, state.diag, cfg.hyper.r, cfg.hyper.s, rng)
    return cfg.model_copy(update={'lam': lam, 'gamma': gamma})


def run_chain(S: SampleCovariance, n: int, cfg: SpikeSlabConfig, init: Optional[PrecisionState] = None,
              rng: Optional[np.random.Generator] = None) -> ChainTrace:
    """Burn-in, then accumulate cfg.keep sweeps into a ChainTrace"""
    if rng is None:
        raise ValueError("run_chain needs an explicit rng for reproducibility")
    chain = SpikeSlabChain(S, n, cfg, init=init)
    trace = ChainTrace.empty(S.p)
    draws, diag_draws = [], []

    logger.info(f"Spike-and-slab chain: p={S.p}, n={n}, burn_in={cfg.burn_in}, keep={cfg.keep}, "
                f"numba={gibbs_kernels.numba_active()}")
    for it in range(cfg.burn_in + cfg.keep):
        start = time.perf_counter()
        chain.sweep(rng)
        trace.sweep_seconds.append(time.perf_counter() - start)

        kept = it - cfg.burn_in
        if kept < 0:
            continue
        offdiag = chain.omega[chain.rows, chain.cols]
        diag = np.diag(chain.omega)
        trace.record(offdiag, diag)
        if cfg.store_draws and kept % cfg.thin == 0:
            draws.append(offdiag.copy())
            diag_draws.append(diag.copy())

    if cfg.store_draws:
        trace.draws = np.array(draws)
        trace.diag_draws = np.array(diag_draws)
    trace.chain_inclusion = [trace.inclusion]
    logger.debug(f"Chain finished with {chain.density} non-zero pairs in the final state")
    return trace


def summarize(trace: ChainTrace, diag_mean: Optional[np.ndarray] = None, threshold: float = 0.5) -> PosteriorSummary:
    """
    Median-probability selection and the conditional-mean estimate.

    Selected pairs get the mean of their non-zero draws, the rest 0; the
    diagonal is the mean over retained sweeps unless ``diag_mean`` is given.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if trace.T == 0:
        raise ValueError("trace has no retained sweeps")
    inclusion = trace.include_count / trace.T
    selected = inclusion > threshold
    if np.any(trace.include_count[selected] == 0):
        raise InternalInvariantError("selected pair with zero inclusion count")

    offdiag = np.zeros_like(trace.value_sum)
    offdiag[selected] = trace.value_sum[selected] / trace.include_count[selected]
    diag = trace.diag_mean if diag_mean is None else np.asarray(diag_mean, dtype=float)
    estimate = PrecisionState(p=trace.p, diag=diag.copy(), offdiag=offdiag)
    return PosteriorSummary(
        inclusion=inclusion,
        estimate=estimate,
        selected=SparsityPattern(p=trace.p, bits=selected),
        threshold=threshold,
    )


def inclusion_agreement(trace: ChainTrace) -> float:
    """Largest absolute difference between per-chain inclusion probabilities"""
    if len(trace.chain_inclusion) < 2:
        return 0.0
    stacked = np.vstack(trace.chain_inclusion)
    return float((stacked.max(axis=0) - stacked.min(axis=0)).max())



def run_chains(S: SampleCovariance, n: int, cfg: SpikeSlabConfig, seed: int, chains: int = 1,
               threads: int = 1, replicate: int = 0, init: Optional[PrecisionState] = None) -> ChainTrace:
    """
    Independent chains on streams chain_stream(c, replicate), merged in chain order.

    The merged trace does not depend on ``threads``.
    """
    if chains < 1:
        raise ValueError(f"chains must be at least 1, got {chains}")

    def _task(c: int):
        return lambda: run_chain(S, n, cfg, init=init, rng=seeded_rng(seed, chain_stream(c, replicate)))

    traces = run_blocking_tasks([_task(c) for c in range(chains)], threads=threads)
    merged = traces[0]
    for other in traces[1:]:
        merged = merged.merge(other)
    if chains > 1:
        logger.info(f"{chains} chains merged, inclusion agreement {inclusion_agreement(merged):.4f}")
    return merged
