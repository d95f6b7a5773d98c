import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

import gibbs_kernels
from bssc_sampler import (
    diag_update,
    inclusion_agreement,
    inclusion_probability,
    offdiag_conditional,
    run_chain,
    run_chains,
    summarize,
    sweep,
    update_hyperparameters,
)
from config import GammaHyper, SpikeSlabConfig
from conftest import random_cov
from covariance import covariance_from_matrix, sample_covariance
from data_models import ChainTrace, DiagMode, PairIndex, PrecisionState, SampleCovariance, n_pairs
from errors import InvalidCovarianceError
from rng import seeded_rng
from simulate import sample_mvn


def _trace_quadratic(state: PrecisionState, S, j, k):
    """Coefficients (a, b) of tr(Omega^2 S) = a x^2 + 2 b x + c in x = w_jk, by finite differences"""
    def g(x):
        omega = state.dense()
        omega[j, k] = omega[k, j] = x
        return float(np.trace(omega @ omega @ S.entries))
    g0, g1, gm = g(0.0), g(1.0), g(-1.0)
    return 0.5 * (g1 + gm - 2 * g0), 0.25 * (g1 - gm)


def test_offdiag_conditional_matches_brute_force_expansion():
    S = random_cov(3, n=40, seed=11)
    state = PrecisionState(p=3, diag=np.ones(3), offdiag=np.full(3, 0.1))
    n, lam, q = 40, 2.0, 0.3
    cfg = SpikeSlabConfig(q=q, lam=lam)
    for flat in range(3):
        pair = PairIndex.at(flat, 3)
        quad, lin = _trace_quadratic(state, S, pair.j, pair.k)
        a = quad + lam / n
        prob, mean, var = offdiag_conditional(state, S, cfg, pair, n)
        assert mean == pytest.approx(-lin / a, rel=1e-10, abs=1e-12)
        assert var == pytest.approx(1.0 / (n * a), rel=1e-10)
        c = q * np.sqrt(lam) / ((1 - q) * np.sqrt(n * a)) * np.exp(n * lin ** 2 / (2 * a))
        assert prob == pytest.approx(c / (1 + c), rel=1e-10)


def test_offdiag_conditional_slab_limit():
    S = covariance_from_matrix(np.eye(3))
    n = 50
    cfg = SpikeSlabConfig(lam=1e-12)
    _, mean, var = offdiag_conditional(PrecisionState.identity(3), S, cfg, PairIndex.of(0, 1, 3), n)
    assert mean == 0.0
    assert var == pytest.approx(1.0 / (2 * n), rel=1e-9)


def test_offdiag_conditional_symmetric_mixture():
    n, lam = 10, 1.0
    ratio = np.sqrt(2 * n + lam) / np.sqrt(lam)
    cfg = SpikeSlabConfig(q=ratio / (1 + ratio), lam=lam)
    S = covariance_from_matrix(np.eye(2))
    prob, _, _ = offdiag_conditional(PrecisionState.identity(2), S, cfg, PairIndex.of(0, 1, 2), n)
    assert prob == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("log_c", [-1e5, -700.0, -30.0, 0.0, 30.0, 700.0, 1e5])
def test_inclusion_probability_is_finite(log_c):
    prob = float(inclusion_probability(log_c))
    assert np.isfinite(prob)
    assert 0.0 <= prob <= 1.0


def test_tiny_q_gives_finite_probability():
    S = random_cov(3, n=30, seed=2)
    cfg = SpikeSlabConfig(q=1e-300)
    prob, _, _ = offdiag_conditional(PrecisionState.identity(3), S, cfg, PairIndex.of(0, 2, 3), 30)
    assert 0.0 <= prob < 1e-250


def test_diag_mode_unit_case():
    for n in (1, 10, 1000):
        mode = gibbs_kernels.diag_mode(np.array([1.0]), np.array([0.0]), n)
        assert mode[0] == pytest.approx(1.0, abs=1e-15)


def test_diag_update_matches_numeric_maximizer():
    # s_11 = 2 and w_12 s_12 = 0.5, so b_1 = 0.5
    S = covariance_from_matrix(np.array([[2.0, 0.5], [0.5, 1.0]]))
    state = PrecisionState(p=2, diag=np.ones(2), offdiag=[1.0])
    n, gamma = 100, 1.0
    got = diag_update(state, S, SpikeSlabConfig(gamma=gamma), 0, n)

    def slope(w):
        return n / w - n * 2.0 * w - (gamma + n * 0.5)

    expected = brentq(slope, 1e-6, 10.0, xtol=1e-15, rtol=1e-15)
    assert got == pytest.approx(expected, abs=1e-8)


def test_diag_mode_root_identity(rng):
    n = rng.uniform(10, 1000, 100)
    s = rng.uniform(0.1, 5, 100)
    linear = rng.uniform(-200, 200, 100)
    w = gibbs_kernels.diag_mode(s, linear, n)
    assert np.all(w > 0)
    residual = n * s * w * w + linear * w - n
    assert np.max(np.abs(residual) / n) < 1e-9


def test_diag_mode_matches_numeric_maximizer_on_random_parameters(rng):
    for _ in range(100):
        n = rng.uniform(10, 1000)
        s = rng.uniform(0.1, 5)
        linear = rng.uniform(-200, 200)
        got = gibbs_kernels.diag_mode(np.array([s]), np.array([linear]), n)[0]
        hi = 2.0 * (abs(linear) / (n * s) + 1.0 / np.sqrt(s)) + 1.0
        expected = brentq(lambda w: n / w - n * s * w - linear, 1e-12, hi, xtol=1e-14, rtol=1e-15)
        assert got == pytest.approx(expected, abs=1e-8)


def test_diag_update_rejects_non_positive_variance():
    S = SampleCovariance(p=2, entries=np.array([[0.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(InvalidCovarianceError):
        diag_update(PrecisionState.identity(2), S, SpikeSlabConfig(), 0, 10)


def test_discretized_diagonal_concentrates_at_mode(rng):
    S = covariance_from_matrix(np.eye(2))
    cfg = SpikeSlabConfig(diag_mode=DiagMode.DISCRETIZED)
    draws = [diag_update(PrecisionState.identity(2), S, cfg, 0, 1000, rng=rng) for _ in range(2000)]
    assert min(draws) > 0
    assert abs(np.mean(draws) - 1.0) < 0.02


def test_tiny_q_sweep_zeroes_everything(rng):
    S = random_cov(4, n=50, seed=8)
    cfg = SpikeSlabConfig(q=1e-300)
    start = PrecisionState(p=4, diag=np.ones(4), offdiag=np.full(6, 0.2))
    out = sweep(start, S, cfg, 50, rng)
    assert np.all(out.offdiag == 0.0)
    assert np.all(out.diag > 0)


def test_density_cap_is_respected(rng):
    truth = PrecisionState(p=3, diag=np.full(3, 2.0), offdiag=[0.6, 0.6, 0.6])
    S = sample_covariance(sample_mvn(truth, 200, seeded_rng(1)))
    cfg = SpikeSlabConfig(tau=1, burn_in=50, keep=300, store_draws=True)
    trace = run_chain(S, 200, cfg, rng=rng)
    assert np.all((trace.draws != 0).sum(axis=1) <= 1)


def test_run_chain_is_deterministic_and_counts_are_bounded():
    S = random_cov(4, n=60, seed=4)
    cfg = SpikeSlabConfig(burn_in=20, keep=100)
    a = run_chain(S, 60, cfg, rng=seeded_rng(5, 16))
    b = run_chain(S, 60, cfg, rng=seeded_rng(5, 16))
    assert np.array_equal(a.include_count, b.include_count)
    assert np.array_equal(a.value_sum, b.value_sum)
    assert np.array_equal(a.diag_sum, b.diag_sum)
    assert a.T == 100
    assert np.all(a.include_count <= a.T)
    assert len(a.sweep_seconds) == 120


def test_run_chain_needs_rng():
    with pytest.raises(ValueError):
        run_chain(random_cov(3), 50, SpikeSlabConfig(burn_in=1, keep=1))


def test_null_model_selects_nothing():
    truth = PrecisionState.identity(3)
    cfg = SpikeSlabConfig(q=0.1, burn_in=200, keep=500)
    empty = 0
    for seed in range(20):
        S = sample_covariance(sample_mvn(truth, 200, seeded_rng(seed, 0)))
        summary = summarize(run_chain(S, 200, cfg, rng=seeded_rng(seed, 16)))
        empty += summary.selected.density == 0
    assert empty >= 19


def test_hyperparameter_means():
    p = 448
    m = n_pairs(p)
    rng = seeded_rng(21)

    state = PrecisionState(p=p, diag=np.ones(p), offdiag=np.full(m, 0.3))
    cfg = SpikeSlabConfig(hyper=GammaHyper(r=2.0, s=0.5))
    lam = np.asarray(update_hyperparameters(state, cfg, rng).lam)
    expected = 2.5 / (0.5 * 0.09 + 0.5)
    assert abs(lam.mean() / expected - 1.0) < 0.02

    state = PrecisionState(p=p, diag=np.ones(p), offdiag=np.zeros(m))
    cfg = SpikeSlabConfig(hyper=GammaHyper(r=1.5, s=1.0))
    lam = np.asarray(update_hyperparameters(state, cfg, rng).lam)
    assert abs(lam.mean() - 2.0) < 0.04


def test_default_hyperparameters_give_finite_draws(rng):
    S = random_cov(4, n=40, seed=9)
    cfg = SpikeSlabConfig(hyper=GammaHyper(), burn_in=10, keep=20)
    trace = run_chain(S, 40, cfg, rng=rng)
    assert np.all(np.isfinite(trace.value_sum))
    out = update_hyperparameters(PrecisionState.identity(4), cfg, rng)
    assert np.all(np.isfinite(out.lam)) and np.all(np.asarray(out.lam) > 0)
    assert np.all(np.isfinite(out.gamma)) and np.all(np.asarray(out.gamma) > 0)


def test_hyperparameter_update_needs_prior(rng):
    with pytest.raises(ValueError):
        update_hyperparameters(PrecisionState.identity(3), SpikeSlabConfig(), rng)


def _manual_trace(counts, sums, T):
    trace = ChainTrace.empty(3)
    trace.include_count[:] = counts
    trace.value_sum[:] = sums
    trace.diag_sum[:] = T
    trace.T = T
    return trace


def test_summarize_examples():
    trace = _manual_trace([10, 0, 0], [3.0, 0.0, 0.0], 10)
    summary = summarize(trace)
    assert list(summary.selected.bits) == [True, False, False]
    assert summary.estimate.offdiag[0] == pytest.approx(0.3)
    assert np.all(summary.estimate.offdiag[1:] == 0.0)
    assert np.allclose(summary.estimate.diag, 1.0)

    with pytest.raises(ValueError):
        summarize(trace, threshold=1.0)


@given(
    st.lists(st.integers(min_value=0, max_value=20), min_size=3, max_size=3),
    st.floats(min_value=0.01, max_value=0.99),
    st.floats(min_value=0.01, max_value=0.99),
)
def test_summarize_threshold_monotonicity(counts, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    trace = _manual_trace(counts, np.asarray(counts) * 0.1, 20)
    assert summarize(trace, threshold=hi).selected.issubset(summarize(trace, threshold=lo).selected)


@pytest.mark.skipif(not gibbs_kernels.HAS_NUMBA, reason="numba not installed")
def test_compiled_and_interpreted_kernels_agree():
    S = random_cov(5, n=30, seed=6)
    cfg = SpikeSlabConfig(burn_in=10, keep=50)
    try:
        gibbs_kernels.set_numba_enabled(True)
        compiled = run_chain(S, 30, cfg, rng=seeded_rng(3))
        gibbs_kernels.set_numba_enabled(False)
        interpreted = run_chain(S, 30, cfg, rng=seeded_rng(3))
    finally:
        gibbs_kernels.set_numba_enabled(True)
    assert np.array_equal(compiled.include_count, interpreted.include_count)
    assert np.allclose(compiled.value_sum, interpreted.value_sum, rtol=1e-9, atol=1e-9)


def test_compiled_kernel_releases_the_gil():
    assert gibbs_kernels.JIT_OPTIONS['nogil'] is True
    if gibbs_kernels.HAS_NUMBA:
        assert gibbs_kernels._offdiag_pass_jit.targetoptions.get('nogil') is True


def test_chains_merge_independently_of_thread_count():
    S = random_cov(4, n=50, seed=10)
    cfg = SpikeSlabConfig(burn_in=10, keep=40)
    single = run_chains(S, 50, cfg, seed=7, chains=3, threads=1)
    pooled = run_chains(S, 50, cfg, seed=7, chains=3, threads=3)
    assert np.array_equal(single.include_count, pooled.include_count)
    assert np.array_equal(single.value_sum, pooled.value_sum)
    assert single.T == 120
    assert len(single.chain_inclusion) == 3
    assert 0.0 <= inclusion_agreement(single) <= 1.0


def test_single_chain_agreement_is_zero():
    S = random_cov(3, n=50, seed=12)
    trace = run_chains(S, 50, SpikeSlabConfig(burn_in=5, keep=10), seed=1)
    assert inclusion_agreement(trace) == 0.0
