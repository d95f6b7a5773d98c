"""
Entry-wise horseshoe CONCORD Gibbs sampler

Off-diagonal entries are N(0, lambda_jk^2 tau^2) with half-Cauchy local and
global scales, written as inverse-gamma mixtures with auxiliaries nu_jk and
eps. There is no point mass, so every draw is non-zero and selection is made
from credible intervals.
"""

import logging
import time
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

import gibbs_kernels
from async_utils import run_blocking_tasks
from bssc_sampler import diag_linear, discretized_draw
from config import HorseshoeConfig
from data_models import (
    ChainTrace,
    DiagMode,
    HorseshoeState,
    HorseshoeSummary,
    PrecisionState,
    SampleCovariance,
    SparsityPattern,
    pair_indices,
)
from errors import DimensionMismatchError, InternalInvariantError, InvalidCovarianceError
from rng import chain_stream, seeded_rng

logger = logging.getLogger(__name__)

_NO_DRAWS = np.empty(0)


class HorseshoeChain:
    """Dense working state of one horseshoe chain"""

    def __init__(self, S: SampleCovariance, n: int, cfg: HorseshoeConfig,
                 init: Optional[PrecisionState] = None, hs: Optional[HorseshoeState] = None):
        self.S = S
        self.n = n
        self.cfg = cfg
        self.p = S.p
        self.logger = logging.getLogger(f"{__name__}.HorseshoeChain")

        init = init if init is not None else PrecisionState.identity(self.p)
        if init.p != S.p:
            raise DimensionMismatchError(f"state is {init.p}x{init.p} but S is {S.p}x{S.p}")
        if not np.all(S.diagonal > 0):
            raise InvalidCovarianceError("sample covariance diagonal must be positive")

        self.s = np.ascontiguousarray(S.entries, dtype=float)
        self.s_diag = np.diag(self.s).copy()
        self.rows, self.cols = (np.ascontiguousarray(a, dtype=np.int64) for a in pair_indices(self.p))
        self.omega = init.dense()
        self.W = self.omega @ self.s
        self.gamma = np.full(self.p, cfg.gamma)

        hs = hs if hs is not None else HorseshoeState.initial(self.p)
        self.lambda2 = hs.lambda2.astype(float, copy=True)
        self.nu = hs.nu.astype(float, copy=True)
        self.tau2 = float(hs.tau2)
        self.eps = float(hs.eps)
        self.logger.debug(f"Chain state ready: p={self.p}, tau^2={self.tau2:.4g}")

    def state(self) -> PrecisionState:
        return PrecisionState(p=self.p, diag=np.diag(self.omega).copy(),
                              offdiag=self.omega[self.rows, self.cols].copy())

    def scales(self) -> HorseshoeState:
        return HorseshoeState(lambda2=self.lambda2.copy(), tau2=self.tau2, nu=self.nu.copy(), eps=self.eps)

    def sweep(self, rng: np.random.Generator):
        m = self.rows.shape[0]
        z = rng.standard_normal(m)
        self.W = self.omega @ self.s

        slab_add = 1.0 / (self.n * self.lambda2 * self.tau2)
        density = int(np.count_nonzero(self.omega[self.rows, self.cols]))
        status = gibbs_kernels.offdiag_pass(
            self.omega, self.W, self.s, self.n, self.rows, self.cols,
            slab_add, _NO_DRAWS, False, m, density, _NO_DRAWS, z,
        )
        if status == gibbs_kernels.INVALID_PRECISION:
            raise InternalInvariantError("non-positive a_jk met during the horseshoe pass")

        if self.cfg.diag_mode is not DiagMode.FIXED:
            linear = diag_linear(self.omega, self.W, self.s_diag, self.gamma, self.n)
            if self.cfg.diag_mode is DiagMode.DISCRETIZED:
                new_diag = discretized_draw(self.s_diag, linear, self.n, rng.random(self.p))
            else:
                new_diag = gibbs_kernels.diag_mode(self.s_diag, linear, self.n)
            np.fill_diagonal(self.omega, new_diag)

        self._update_scales(rng)

    def _update_scales(self, rng: np.random.Generator):
        offdiag = self.omega[self.rows, self.cols]
        sq = offdiag * offdiag

        # local scales are conditionally independent given omega and tau
        self.lambda2 = gibbs_kernels.inverse_gamma(1.0, 1.0 / self.nu + sq / (2.0 * self.tau2), rng)
        self.nu = gibbs_kernels.inverse_gamma(1.0, 1.0 + 1.0 / self.lambda2, rng)

        m = sq.shape[0]
        with np.errstate(divide='ignore'):
            log_terms = np.concatenate([[-np.log(self.eps)], np.log(sq) - np.log(2.0) - np.log(self.lambda2)])
        log_rate = float(logsumexp(log_terms))
        shape = 0.5 + 0.5 * m
        self.tau2 = float(np.exp(log_rate - np.log(rng.standard_gamma(shape))))
        self.eps = float(gibbs_kernels.inverse_gamma(1.0, np.array([1.0 + 1.0 / self.tau2]), rng)[0])

        if not (np.isfinite(self.tau2) and self.tau2 > 0):
            raise InternalInvariantError(f"global scale tau^2={self.tau2} is not positive and finite")


def bhsc_sweep(state: PrecisionState, hs: HorseshoeState, S: SampleCovariance, n: int,
               rng: np.random.Generator, cfg: Optional[HorseshoeConfig] = None) -> Tuple[PrecisionState, HorseshoeState]:
    """One sweep: all pairs, all diagonals, local scales, then the global scale"""
    chain = HorseshoeChain(S, n, cfg or HorseshoeConfig(), init=state, hs=hs)
    chain.sweep(rng)
    return chain.state(), chain.scales()


def sample_bhsc(S: SampleCovariance, n: int, cfg: HorseshoeConfig,
                rng: Optional[np.random.Generator] = None) -> ChainTrace:
    """Burn-in, then keep cfg.keep sweeps; thinned draws are always stored for the intervals"""
    if rng is None:
        raise ValueError("sample_bhsc needs an explicit rng for reproducibility")
    chain = HorseshoeChain(S, n, cfg)
    trace = ChainTrace.empty(S.p)
    draws, diag_draws = [], []

    logger.info(f"Horseshoe chain: p={S.p}, n={n}, burn_in={cfg.burn_in}, keep={cfg.keep}")
    for it in range(cfg.burn_in + cfg.keep):
        start = time.perf_counter()
        chain.sweep(rng)
        trace.sweep_seconds.append(time.perf_counter() - start)

        kept = it - cfg.burn_in
        if kept < 0:
            continue
        offdiag = chain.omega[chain.rows, chain.cols]
        if np.any(offdiag == 0.0):
            raise InternalInvariantError("horseshoe draw contains an exact zero")
        diag = np.diag(chain.omega)
        trace.record(offdiag, diag)
        if kept % cfg.thin == 0:
            draws.append(offdiag.copy())
            diag_draws.append(diag.copy())

    trace.draws = np.array(draws)
    trace.diag_draws = np.array(diag_draws)
    trace.chain_inclusion = [trace.inclusion]
    logger.debug(f"Horseshoe chain finished, tau^2={chain.tau2:.4g}")
    return trace


def summarize_bhsc(trace: ChainTrace, level: float = 0.95) -> HorseshoeSummary:
    """Posterior mean and central credible intervals; a pair is selected when its interval excludes 0"""
    if not 0 < level < 1:
        raise ValueError(f"credible level must lie in (0, 1), got {level}")
    if trace.T == 0 or trace.draws is None or len(trace.draws) == 0:
        raise ValueError("trace has no stored draws")
    alpha = 1.0 - level
    ci_lo, ci_hi = np.quantile(trace.draws, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    mean = PrecisionState(p=trace.p, diag=trace.diag_mean.copy(), offdiag=trace.value_sum / trace.T)
    selected = (ci_lo > 0.0) | (ci_hi < 0.0)
    return HorseshoeSummary(
        mean=mean,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        level=level,
        selected=SparsityPattern(p=trace.p, bits=selected),
        T=trace.T,
        sweep_seconds=list(trace.sweep_seconds),
    )


def run_chain_bhsc(S: SampleCovariance, n: int, cfg: HorseshoeConfig,
                   rng: Optional[np.random.Generator] = None) -> HorseshoeSummary:
    return summarize_bhsc(sample_bhsc(S, n, cfg, rng=rng), cfg.ci_level)


def run_chains_bhsc(S: SampleCovariance, n: int, cfg: HorseshoeConfig, seed: int, chains: int = 1,
                    threads: int = 1, replicate: int = 0) -> HorseshoeSummary:
    """Independent horseshoe chains with their draws pooled in chain order"""
    if chains < 1:
        raise ValueError(f"chains must be at least 1, got {chains}")

    def _task(c: int):
        return lambda: sample_bhsc(S, n, cfg, rng=seeded_rng(seed, chain_stream(c, replicate)))

    traces = run_blocking_tasks([_task(c) for c in range(chains)], threads=threads)
    merged = traces[0]
    for other in traces[1:]:
        merged = merged.merge(other)
    return summarize_bhsc(merged, cfg.ci_level)


def compose_half_cauchy(size: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """
    |x| for x ~ C+(0, scale) built from the inverse-gamma mixture
    lambda^2 | a ~ InvGamma(1/2, 1/a), a ~ InvGamma(1/2, 1/scale^2).
    """
    a = gibbs_kernels.inverse_gamma(0.5, np.full(size, 1.0 / scale ** 2), rng)
    lambda2 = gibbs_kernels.inverse_gamma(0.5, 1.0 / a, rng)
    return np.sqrt(lambda2)
