"""
Synthetic ground truth, Gaussian data and edge-recovery metrics
"""

import logging
import math
import time
from typing import Any, Dict, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from async_utils import run_blocking_tasks
from bhsc_sampler import run_chain_bhsc
from bssc_sampler import run_chain, summarize
from config import BenchSpec, HorseshoeConfig, RefitConfig, TruthSpec
from covariance import pattern_of, sample_covariance
from data_models import AccuracyReport, GraphConstraint, PrecisionState, SparsityPattern, n_pairs
from errors import DimensionMismatchError, InvalidCovarianceError
from refit import refit_gibbs
from rng import DATA_STREAM, REFIT_STREAM, TRUTH_STREAM, chain_stream, replicate_stream, seeded_rng

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['tp', 'tn', 'fp', 'fn', 'sp', 'se', 'mcc', 'rel_frobenius', 'bssc_rel_frobenius', 'seconds']


def generate_truth(spec: TruthSpec, rng: np.random.Generator) -> PrecisionState:
    """
    Random sparse precision matrix.

    ceil(density * p(p-1)/2) pairs are drawn without replacement, each with a
    magnitude uniform on [magnitude_low, magnitude_high] and a random sign.
    The diagonal is the absolute row sum plus diag_margin, so the matrix is
    strictly diagonally dominant.
    """
    p = spec.p
    m = n_pairs(p)
    count = spec.edge_count
    offdiag = np.zeros(m)
    if count:
        chosen = rng.choice(m, size=count, replace=False)
        magnitude = rng.uniform(spec.magnitude_low, spec.magnitude_high, size=count)
        sign = rng.choice(np.array([-1.0, 1.0]), size=count)
        offdiag[chosen] = magnitude * sign

    state = PrecisionState(p=p, diag=np.ones(p), offdiag=offdiag)
    row_sums = np.abs(state.dense()).sum(axis=1) - 1.0
    return PrecisionState(p=p, diag=row_sums + spec.diag_margin, offdiag=offdiag)


def sample_mvn(omega0: PrecisionState, n: int, rng: np.random.Generator) -> np.ndarray:
    """n rows i.i.d. N(0, inverse(omega0)) from the Cholesky factor of omega0"""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    try:
        chol = np.linalg.cholesky(omega0.dense())
    except np.linalg.LinAlgError:
        raise InvalidCovarianceError("precision matrix is not positive definite")
    z = rng.standard_normal((n, omega0.p))
    # x = L^{-T} z has covariance (L L^T)^{-1}
    return solve_triangular(chol, z.T, lower=True, trans='T').T


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def accuracy(selected: SparsityPattern, truth: SparsityPattern) -> AccuracyReport:
    """Counts over the off-diagonal pairs; ratios with a zero denominator are reported as 0"""
    if selected.p != truth.p:
        raise DimensionMismatchError(f"selected pattern is for p={selected.p}, truth for p={truth.p}")
    sel, tru = selected.bits, truth.bits
    tp = int(np.sum(sel & tru))
    tn = int(np.sum(~sel & ~tru))
    fp = int(np.sum(sel & ~tru))
    fn = int(np.sum(~sel & tru))

    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den else 0.0
    return AccuracyReport(
        tp=tp, tn=tn, fp=fp, fn=fn,
        sp=_ratio(tn, tn + fp),
        se=_ratio(tp, tp + fn),
        mcc=float(mcc),
    )


def relative_frobenius(est: PrecisionState, truth: PrecisionState) -> float:
    """||est - truth||_F / ||truth||_F over the full symmetric matrices"""
    if est.p != truth.p:
        raise DimensionMismatchError(f"estimate is for p={est.p}, truth for p={truth.p}")
    norm = np.linalg.norm(truth.dense())
    if norm == 0:
        raise ValueError("truth has zero Frobenius norm")
    return float(np.linalg.norm(est.dense() - truth.dense()) / norm)


def _replicate_once(bench: BenchSpec, rep: int) -> Dict[str, Any]:
    start = time.perf_counter()
    spec = TruthSpec(p=bench.p, density=bench.density, seed=bench.seed)
    truth = generate_truth(spec, seeded_rng(bench.seed, replicate_stream(TRUTH_STREAM, rep)))
    data = sample_mvn(truth, bench.n, seeded_rng(bench.seed, replicate_stream(DATA_STREAM, rep)))
    S = sample_covariance(data)
    chain_rng = seeded_rng(bench.seed, chain_stream(0, rep))

    bssc_error = float('nan')
    if bench.method == 'bhsc':
        hs_cfg = HorseshoeConfig(burn_in=bench.burn_in, keep=bench.keep, ci_level=bench.ci_level)
        hs = run_chain_bhsc(S, bench.n, hs_cfg, rng=chain_rng)
        selected, estimate = hs.selected, hs.mean
    else:
        summary = summarize(run_chain(S, bench.n, bench.spike_slab(), rng=chain_rng), threshold=bench.threshold)
        selected, estimate = summary.selected, summary.estimate
        bssc_error = relative_frobenius(estimate, truth)
        if bench.method == 'bssc+refit':
            graph = GraphConstraint(p=bench.p, edges=selected)
            refit_cfg = RefitConfig(sweeps=bench.refit_sweeps, ci_level=bench.ci_level)
            result = refit_gibbs(S, graph, bench.n, refit_cfg,
                                 seeded_rng(bench.seed, replicate_stream(REFIT_STREAM, rep)))
            estimate = result.mean

    report = accuracy(selected, pattern_of(truth))
    row = {'rep': rep, **{k: getattr(report, k) for k in ('tp', 'tn', 'fp', 'fn', 'sp', 'se', 'mcc')}}
    row['rel_frobenius'] = relative_frobenius(estimate, truth)
    row['bssc_rel_frobenius'] = bssc_error
    row['seconds'] = time.perf_counter() - start
    row['error'] = ''
    return row


def replicate(bench: BenchSpec, threads: int = 1) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    Run bench.reps independent simulate-fit-score replicates.

    Returns the per-replicate table and the means over the replicates that
    succeeded. A failing replicate keeps its row with the error message.
    """
    logger.info(f"Benchmark {bench.method}: p={bench.p}, n={bench.n}, density={bench.density}, "
                f"reps={bench.reps}, threads={threads}")

    def _task(rep: int):
        return lambda: _replicate_once(bench, rep)

    results = run_blocking_tasks([_task(r) for r in range(bench.reps)], threads=threads, return_exceptions=True)
    rows = []
    for rep, result in enumerate(results):
        if isinstance(result, Exception):
            logger.error(f"Replicate {rep} failed: {result}")
            rows.append({'rep': rep, **{c: float('nan') for c in METRIC_COLUMNS}, 'error': repr(result)})
        else:
            rows.append(result)

    table = pd.DataFrame(rows, columns=['rep'] + METRIC_COLUMNS + ['error'])
    return table, aggregate(table)


def aggregate(table: pd.DataFrame) -> Dict[str, Any]:
    """Column means over the successful replicates"""
    ok = table[table['error'] == '']
    summary: Dict[str, Any] = {'reps': int(len(table)), 'failed': int(len(table) - len(ok))}
    for column in METRIC_COLUMNS:
        values = ok[column].astype(float)
        summary[column] = float(values.mean()) if values.notna().any() else None
    return summary
