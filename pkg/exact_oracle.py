"""
Exact posterior over sparsity patterns for small p with the diagonal held fixed

With the diagonal fixed, n tr(Omega^2 S) is a quadratic form in the
off-diagonal coordinates with matrix Phi and linear term a, so every
pattern's marginal likelihood is a Gaussian integral.
"""

import logging
from typing import List

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp

from async_utils import run_blocking_tasks
from config import SpikeSlabConfig
from data_models import PatternPosterior, PhiMatrix, SampleCovariance, n_pairs, pair_indices
from errors import DimensionMismatchError, InvalidCovarianceError, OracleDegenerateError
from refit import quadratic_system

logger = logging.getLogger(__name__)

MAX_ENUMERATED_PAIRS = 20
BLOCK_SIZE = 4096


def build_phi(S: SampleCovariance) -> PhiMatrix:
    """
    Phi over all pairs in canonical order.

    Phi[(a,b),(a,b)] = s_aa + s_bb, pairs sharing one index contribute the
    covariance of their other endpoints, disjoint pairs give 0.
    """
    rows, cols = pair_indices(S.p)
    return PhiMatrix(p=S.p, entries=quadratic_system(S, rows, cols, with_diagonal=False))


def build_a(S: SampleCovariance, diag) -> np.ndarray:
    """a[(j,k)] = s_jk * (w_jj + w_kk)"""
    diag = np.asarray(diag, dtype=float)
    if diag.shape != (S.p,):
        raise DimensionMismatchError(f"diag has shape {diag.shape}, expected ({S.p},)")
    if not np.all(diag > 0):
        raise InvalidCovarianceError("fixed diagonal entries must be positive")
    rows, cols = pair_indices(S.p)
    return S.entries[rows, cols] * (diag[rows] + diag[cols])


def _log_weights(codes: np.ndarray, precision: np.ndarray, a: np.ndarray, lam: np.ndarray,
                 n: int, log_q: float, log_1mq: float, cap: int) -> np.ndarray:
    m = len(a)
    out = np.empty(len(codes))
    for idx, code in enumerate(codes):
        support = np.array([i for i in range(m) if (int(code) >> i) & 1], dtype=np.int64)
        d = support.size
        if d > cap:
            out[idx] = -np.inf
            continue
        base = d * log_q + (m - d) * log_1mq
        if d == 0:
            out[idx] = base
            continue
        block = precision[np.ix_(support, support)]
        try:
            factor = cho_factor(block, lower=True)
        except LinAlgError:
            raise OracleDegenerateError(f"(n Phi + Lambda) restricted to pattern {int(code)} is not positive definite")
        logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
        a_l = a[support]
        quad = float(a_l @ cho_solve(factor, a_l))
        out[idx] = base + 0.5 * np.sum(np.log(lam[support])) - 0.5 * logdet + 0.5 * n * n * quad
    return out


def enumerate_patterns(S: SampleCovariance, n: int, diag, cfg: SpikeSlabConfig, threads: int = 1) -> PatternPosterior:
    """
    Normalized posterior probability of every pattern given the diagonal.

    Patterns are coded as integers whose bit i is canonical pair i. Patterns
    above the density cap cfg.tau get probability 0.
    """
    p = S.p
    m = n_pairs(p)
    if m > MAX_ENUMERATED_PAIRS:
        raise ValueError(f"p={p} has {m} pairs; enumeration is limited to {MAX_ENUMERATED_PAIRS}")

    phi = build_phi(S)
    a = build_a(S, diag)
    lam = cfg.lambda_vector(p)
    cap = cfg.tau_cap(p)
    precision = n * phi.entries + np.diag(lam)
    log_q, log_1mq = float(np.log(cfg.q)), float(np.log1p(-cfg.q))

    codes = np.arange(1 << m, dtype=np.int64)
    blocks: List[np.ndarray] = [codes[i:i + BLOCK_SIZE] for i in range(0, len(codes), BLOCK_SIZE)]
    logger.info(f"Enumerating {len(codes)} patterns for p={p} in {len(blocks)} blocks")

    def _task(block):
        return lambda: _log_weights(block, precision, a, lam, n, log_q, log_1mq, cap)

    log_weights = np.concatenate(run_blocking_tasks([_task(b) for b in blocks], threads=threads))
    log_norm = float(logsumexp(log_weights))
    probs = np.exp(log_weights - log_norm)
    return PatternPosterior(p=p, codes=codes, probs=probs, log_norm=log_norm)


def marginal_inclusion(post: PatternPosterior) -> np.ndarray:
    """p_jk = total probability of the patterns containing (j, k)"""
    m = n_pairs(post.p)
    return np.array([post.probs[((post.codes >> i) & 1) == 1].sum() for i in range(m)])
