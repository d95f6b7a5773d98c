"""
Refitted posterior on a selected graph

Given an edge set E, the refitted posterior is proportional to
exp{n tr(Omega) - (n/2) tr(Omega^2 S)} over symmetric matrices whose
off-diagonal support lies in E. Its mode solves a (p + |E|) linear system;
the Gibbs sampler gives means and credible intervals.
"""

import logging
import time
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

import gibbs_kernels
from config import RefitConfig
from data_models import GraphConstraint, PrecisionState, RefitResult, SampleCovariance, pair_indices
from errors import DimensionMismatchError, InternalInvariantError, InvalidCovarianceError, SingularSystemError

logger = logging.getLogger(__name__)

_NO_DRAWS = np.empty(0)


def quadratic_system(S: SampleCovariance, rows: np.ndarray, cols: np.ndarray, with_diagonal: bool = True) -> np.ndarray:
    """
    Matrix M with tr(Omega^2 S) = x' M x, where x holds the free coordinates of Omega.

    Coordinates are the p diagonal entries (when ``with_diagonal``) followed by
    the off-diagonal pairs (rows[i], cols[i]). M is assembled vertex by vertex:
    two coordinates interact only through a shared index, contributing
    s[x, y] for their other endpoints x and y.
    """
    p = S.p
    s = S.entries
    offset = p if with_diagonal else 0
    size = offset + len(rows)
    M = np.zeros((size, size))

    members = [[] for _ in range(p)]
    if with_diagonal:
        for v in range(p):
            members[v].append((v, v))
    for i, (a, b) in enumerate(zip(rows, cols)):
        members[int(a)].append((offset + i, int(b)))
        members[int(b)].append((offset + i, int(a)))

    for v in range(p):
        if not members[v]:
            continue
        idx = np.array([m[0] for m in members[v]], dtype=np.int64)
        other = np.array([m[1] for m in members[v]], dtype=np.int64)
        np.add.at(M, (idx[:, None], idx[None, :]), s[np.ix_(other, other)])
    return M


def _check(S: SampleCovariance, G: GraphConstraint):
    if S.p != G.p:
        raise DimensionMismatchError(f"graph is for p={G.p} but S is {S.p}x{S.p}")


def refit_mode(S: SampleCovariance, G: GraphConstraint, n: int) -> PrecisionState:
    """
    Maximizer of n tr(Omega) - (n/2) tr(Omega^2 S) over matrices supported on G.

    Solves M x = u, u = 1 on the diagonal coordinates and 0 on the edges, by
    Cholesky factorization.
    """
    _check(S, G)
    G.check_proper(n)
    p = S.p
    rows, cols = pair_indices(p)
    edge_rows, edge_cols = rows[G.edges.bits], cols[G.edges.bits]

    M = quadratic_system(S, edge_rows, edge_cols, with_diagonal=True)
    u = np.zeros(M.shape[0])
    u[:p] = 1.0
    try:
        factor = cho_factor(M, lower=True)
    except LinAlgError:
        raise SingularSystemError(
            f"refit system of size {M.shape[0]} is not positive definite", float(np.linalg.cond(M))
        )
    x = cho_solve(factor, u)

    if not np.all(x[:p] > 0):
        raise SingularSystemError("refit mode has a non-positive diagonal entry", float(np.linalg.cond(M)))

    offdiag = np.zeros(len(rows))
    offdiag[G.edges.bits] = x[p:]
    logger.debug(f"Refit mode solved: {G.edges.density} edges, system size {M.shape[0]}")
    return PrecisionState(p=p, diag=x[:p], offdiag=offdiag)


def min_eigenvalue(state: PrecisionState) -> float:
    return float(np.linalg.eigvalsh(state.dense())[0])


def project_pd(state: PrecisionState, eps: float = 1e-6) -> PrecisionState:
    """Shift the diagonal so the smallest eigenvalue becomes eps; PD inputs come back unchanged"""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    lowest = min_eigenvalue(state)
    if lowest > 0:
        return state.copy()
    return PrecisionState(p=state.p, diag=state.diag + (eps - lowest), offdiag=state.offdiag.copy())


def log_refit_density(state: PrecisionState, S: SampleCovariance, G: GraphConstraint, n: int) -> float:
    """n tr(Omega) - (n/2) tr(Omega^2 S), unnormalized"""
    _check(S, G)
    if state.p != S.p:
        raise DimensionMismatchError(f"state is {state.p}x{state.p} but S is {S.p}x{S.p}")
    G.check_member(state)
    omega = state.dense()
    return float(n * np.trace(omega) - 0.5 * n * np.sum((omega @ omega) * S.entries))


def offdiag_refit_conditional(state: PrecisionState, S: SampleCovariance, j: int, k: int,
                              n: int) -> Tuple[float, float]:
    """Mean and variance of one edge entry given the rest: N(-b/a, 1/(n a)), a = s_jj + s_kk"""
    s = S.entries
    omega = state.dense()
    a = s[j, j] + s[k, k]
    b = omega[j] @ s[:, k] - omega[j, k] * s[k, k] + omega[k] @ s[:, j] - omega[k, j] * s[j, j]
    return float(-b / a), float(1.0 / (n * a))


def diag_refit_conditional(state: PrecisionState, S: SampleCovariance, j: int, n: int) -> Tuple[float, float]:
    """Mean and variance of one diagonal entry before truncation to (0, inf): ((1 - b_j)/s_jj, 1/(n s_jj))"""
    s = S.entries
    omega = state.dense()
    b_j = omega[j] @ s[j] - omega[j, j] * s[j, j]
    return float((1.0 - b_j) / s[j, j]), float(1.0 / (n * s[j, j]))


class RefitChain:
    """Gibbs sampler over the diagonal and the edge entries of G"""

    def __init__(self, S: SampleCovariance, G: GraphConstraint, n: int, init: PrecisionState):
        _check(S, G)
        G.check_member(init)
        if not np.all(S.diagonal > 0):
            raise InvalidCovarianceError("sample covariance diagonal must be positive")
        self.logger = logging.getLogger(f"{__name__}.RefitChain")
        self.n = n
        self.p = S.p
        self.s = np.ascontiguousarray(S.entries, dtype=float)
        self.s_diag = np.diag(self.s).copy()
        rows, cols = pair_indices(self.p)
        self.bits = G.edges.bits
        self.rows = np.ascontiguousarray(rows[self.bits], dtype=np.int64)
        self.cols = np.ascontiguousarray(cols[self.bits], dtype=np.int64)
        self.all_rows, self.all_cols = rows, cols
        self.omega = init.dense()
        self.W = self.omega @ self.s
        self.slab_add = np.zeros(len(self.rows))
        self.logger.debug(f"Chain state ready: p={self.p}, free edges={len(self.rows)}")

    def state(self) -> PrecisionState:
        return PrecisionState(p=self.p, diag=np.diag(self.omega).copy(),
                              offdiag=self.omega[self.all_rows, self.all_cols].copy())

    def sweep(self, rng: np.random.Generator):
        m = len(self.rows)
        z = rng.standard_normal(m)
        self.W = self.omega @ self.s
        if m:
            status = gibbs_kernels.offdiag_pass(
                self.omega, self.W, self.s, self.n, self.rows, self.cols,
                self.slab_add, _NO_DRAWS, False, m, int(np.count_nonzero(self.omega[self.rows, self.cols])),
                _NO_DRAWS, z,
            )
            if status == gibbs_kernels.INVALID_PRECISION:
                raise InternalInvariantError("non-positive a_jk met during the refit pass")

        b = np.diag(self.W) - np.diag(self.omega) * self.s_diag
        mean = (1.0 - b) / self.s_diag
        sd = 1.0 / np.sqrt(self.n * self.s_diag)
        np.fill_diagonal(self.omega, gibbs_kernels.truncated_normal_positive(mean, sd, rng))


def refit_gibbs(S: SampleCovariance, G: GraphConstraint, n: int, cfg: RefitConfig,
                rng: np.random.Generator, init: Optional[PrecisionState] = None) -> RefitResult:
    """
    Mode, Gibbs mean and central credible intervals of the refitted posterior.

    The chain starts at the mode unless ``init`` is given. Non-PD mode and mean
    get a projected copy alongside.
    """
    _check(S, G)
    G.check_proper(n)
    mode = refit_mode(S, G, n)
    chain = RefitChain(S, G, n, init if init is not None else mode)

    kept = []
    seconds = []
    logger.info(f"Refit chain: p={S.p}, n={n}, edges={G.edges.density}, "
                f"burn_in={cfg.burn_in}, sweeps={cfg.sweeps}")
    for it in range(cfg.burn_in + cfg.sweeps):
        start = time.perf_counter()
        chain.sweep(rng)
        seconds.append(time.perf_counter() - start)
        if it >= cfg.burn_in:
            kept.append(np.concatenate([np.diag(chain.omega), chain.omega[chain.all_rows, chain.all_cols]]))

    draws = np.array(kept)
    alpha = 1.0 - cfg.ci_level
    lo, hi = np.quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    avg = draws.mean(axis=0)
    p = S.p
    mean = PrecisionState(p=p, diag=avg[:p], offdiag=avg[p:])

    lowest = min_eigenvalue(mode)
    if lowest <= 0:
        logger.warning(f"Refit mode is not positive definite (min eigenvalue {lowest:.3e}), projecting")
    mean_lowest = min_eigenvalue(mean)
    return RefitResult(
        mode=mode,
        mean=mean,
        ci_lo=lo[p:],
        ci_hi=hi[p:],
        level=cfg.ci_level,
        min_eigenvalue=lowest,
        projected=project_pd(mode, cfg.eps) if lowest <= 0 else None,
        mean_projected=project_pd(mean, cfg.eps) if mean_lowest <= 0 else None,
        sweep_seconds=seconds,
        diag_ci_lo=lo[:p],
        diag_ci_hi=hi[:p],
    )
