import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_data
from covariance import covariance_from_matrix, pattern_of, sample_covariance
from data_models import (
    ChainTrace,
    GraphConstraint,
    PairIndex,
    PrecisionState,
    SampleCovariance,
    SparsityPattern,
    flatten,
    n_pairs,
    unflatten,
)
from errors import (
    ConstraintViolationError,
    DimensionMismatchError,
    ImproperPosteriorError,
    InsufficientDataError,
    InvalidCovarianceError,
    InvalidDataError,
)
from rng import chain_stream, seeded_rng


@st.composite
def pairs(draw):
    p = draw(st.integers(min_value=2, max_value=64))
    j = draw(st.integers(min_value=0, max_value=p - 2))
    k = draw(st.integers(min_value=j + 1, max_value=p - 1))
    return p, j, k


@given(pairs())
def test_flat_index_round_trip(case):
    p, j, k = case
    flat = flatten(j, k, p)
    assert 0 <= flat < n_pairs(p)
    assert unflatten(flat, p) == (j, k)
    assert flatten(k, j, p) == flat


@pytest.mark.parametrize("p", [2, 3, 7, 64])
def test_flat_index_endpoints(p):
    assert flatten(0, 1, p) == 0
    assert flatten(p - 2, p - 1, p) == n_pairs(p) - 1


def test_flat_index_rejects_diagonal_and_out_of_range():
    with pytest.raises(IndexError):
        flatten(2, 2, 4)
    with pytest.raises(IndexError):
        flatten(0, 4, 4)
    with pytest.raises(IndexError):
        unflatten(6, 4)


def test_pair_index_orders_endpoints():
    pair = PairIndex.of(3, 1, 5)
    assert (pair.j, pair.k) == (1, 3)
    assert PairIndex.at(pair.flat, 5) == pair


def test_precision_state_dense_is_symmetric(rng):
    p = 6
    state = PrecisionState(p=p, diag=rng.uniform(0.5, 2.0, p), offdiag=rng.standard_normal(n_pairs(p)))
    dense = state.dense()
    assert np.array_equal(dense, dense.T)
    assert np.array_equal(np.diag(dense), state.diag)
    assert state.get(1, 4) == state.get(4, 1) == dense[1, 4]
    back = PrecisionState.from_dense(dense)
    assert np.array_equal(back.offdiag, state.offdiag)


def test_precision_state_validation():
    with pytest.raises(InvalidCovarianceError):
        PrecisionState(p=2, diag=[1.0, 0.0], offdiag=[0.1])
    with pytest.raises(DimensionMismatchError):
        PrecisionState(p=3, diag=[1.0, 1.0, 1.0], offdiag=[0.1])


def test_sparsity_pattern_basics():
    pattern = SparsityPattern.from_edges(4, [(0, 1), (3, 2)])
    assert pattern.density == 2
    assert pattern.edges() == [(0, 1), (2, 3)]
    assert list(pattern.vertex_degrees()) == [1, 1, 1, 1]
    assert SparsityPattern.from_code(4, pattern.code) == pattern
    assert SparsityPattern.empty(4).issubset(pattern)
    assert not pattern.issubset(SparsityPattern.empty(4))


def test_sample_covariance_two_rows():
    S = sample_covariance(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(S.entries, [[0.5, 0.0], [0.0, 0.5]])
    assert S.n == 2


def test_sample_covariance_of_zero_rows():
    S = sample_covariance(np.zeros((5, 3)))
    assert np.array_equal(S.entries, np.zeros((3, 3)))


def test_sample_covariance_matches_double_loop():
    data = random_data(4, 10, seed=3)
    S = sample_covariance(data)
    n, p = data.shape
    brute = np.zeros((p, p))
    for j in range(p):
        for k in range(p):
            brute[j, k] = sum(data[i, j] * data[i, k] for i in range(n)) / n
    assert np.allclose(S.entries, brute, atol=1e-12, rtol=0)


def test_sample_covariance_concentrates():
    sigma = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
    data = seeded_rng(7).multivariate_normal(np.zeros(3), sigma, size=100)
    S = sample_covariance(data)
    assert np.max(np.abs(S.entries - sigma)) < 0.5


def test_sample_covariance_center_and_standardize():
    data = random_data(3, 40, seed=5) + 10.0
    centered = sample_covariance(data, center=True)
    expected = np.cov(data, rowvar=False, bias=True)
    assert np.allclose(centered.entries, expected)
    standardized = sample_covariance(data, standardize=True)
    assert np.allclose(np.diag(standardized.entries), 1.0)


def test_sample_covariance_errors():
    bad = np.ones((5, 2))
    bad[2, 1] = np.nan
    with pytest.raises(InvalidDataError):
        sample_covariance(bad)
    with pytest.raises(InsufficientDataError):
        sample_covariance(np.ones((1, 3)))
    with pytest.raises(InsufficientDataError):
        sample_covariance(np.ones((4, 1)))


def test_covariance_must_be_symmetric():
    with pytest.raises(InvalidCovarianceError):
        SampleCovariance(p=2, entries=np.array([[1.0, 0.2], [0.1, 1.0]]))
    with pytest.raises(InvalidCovarianceError):
        covariance_from_matrix(np.array([[0.0, 0.0], [0.0, 1.0]]))


def test_pattern_of_examples():
    assert pattern_of(PrecisionState.identity(3)).density == 0

    state = PrecisionState(p=3, diag=np.ones(3), offdiag=[0.3, 0.0, 0.0])
    assert list(pattern_of(state).bits) == [True, False, False]

    state = PrecisionState(p=3, diag=np.ones(3), offdiag=[1e-12, 0.5, 0.0])
    assert list(pattern_of(state, tol=1e-9).bits) == [False, True, False]

    with pytest.raises(ValueError):
        pattern_of(state, tol=-1.0)


def test_seeded_rng_is_reproducible_and_streams_differ():
    a = seeded_rng(99, 3).random(5)
    b = seeded_rng(99, 3).random(5)
    c = seeded_rng(99, 4).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert chain_stream(0, 1) != chain_stream(1, 0)
    with pytest.raises(ValueError):
        seeded_rng(-1)


def _trace(p, counts, sums, T):
    trace = ChainTrace.empty(p)
    trace.include_count += np.asarray(counts)
    trace.value_sum += np.asarray(sums, dtype=float)
    trace.T = T
    return trace


@settings(max_examples=30)
@given(st.lists(st.integers(min_value=0, max_value=5), min_size=9, max_size=9))
def test_chain_trace_merge_is_order_independent(counts):
    a = _trace(3, counts[0:3], counts[0:3], 5)
    b = _trace(3, counts[3:6], counts[3:6], 5)
    c = _trace(3, counts[6:9], counts[6:9], 5)
    left = a.merge(b).merge(c)
    right = c.merge(a.merge(b))
    assert np.array_equal(left.include_count, right.include_count)
    assert np.array_equal(left.value_sum, right.value_sum)
    assert left.T == right.T == 15


def test_chain_trace_record_accumulates_sweeps():
    trace = ChainTrace.empty(3)
    trace.record(np.array([0.5, 0.0, -0.2]), np.array([1.0, 2.0, 3.0]))
    trace.record(np.array([0.1, 0.0, 0.0]), np.array([3.0, 2.0, 1.0]))
    assert trace.T == 2
    assert np.array_equal(trace.include_count, [2, 0, 1])
    np.testing.assert_allclose(trace.value_sum, [0.6, 0.0, -0.2])
    np.testing.assert_allclose(trace.inclusion, [1.0, 0.0, 0.5])
    np.testing.assert_allclose(trace.diag_mean, [2.0, 2.0, 2.0])


def test_graph_constraint_checks():
    star = SparsityPattern.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    graph = GraphConstraint(p=4, edges=star)
    assert graph.degree == 3
    graph.check_proper(4)
    with pytest.raises(ImproperPosteriorError):
        graph.check_proper(3)

    outside = PrecisionState(p=4, diag=np.ones(4), offdiag=[0.1, 0.1, 0.1, 0.2, 0.0, 0.0])
    with pytest.raises(ConstraintViolationError):
        graph.check_member(outside)
