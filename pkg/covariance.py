"""
Sample covariance construction and sparsity-pattern extraction
"""

import logging

import numpy as np

from data_models import PrecisionState, SampleCovariance, SparsityPattern
from errors import InsufficientDataError, InvalidCovarianceError, InvalidDataError

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-10


def sample_covariance(data, center: bool = False, standardize: bool = False) -> SampleCovariance:
    """
    S = (1/n) Y'Y for an n x p data matrix.

    Args:
        data: observations in rows
        center: subtract column means first (divisor stays n)
        standardize: rescale S to unit diagonal, i.e. fit on unit-variance columns
    """
    y = np.asarray(data, dtype=float)
    if y.ndim != 2:
        raise InvalidDataError(f"data must be a 2-D matrix, got {y.ndim} dimensions")
    n, p = y.shape
    if n < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {n}")
    if p < 2:
        raise InsufficientDataError(f"need at least 2 variables, got {p}")
    if not np.all(np.isfinite(y)):
        raise InvalidDataError("data contains non-finite values")

    if center:
        y = y - y.mean(axis=0)
    entries = (y.T @ y) / n

    if standardize:
        scale = np.sqrt(np.diag(entries))
        if np.any(scale == 0):
            raise InvalidDataError("cannot standardize a column with zero variance")
        entries = entries / np.outer(scale, scale)

    entries = 0.5 * (entries + entries.T)
    min_eig = float(np.linalg.eigvalsh(entries)[0])
    if min_eig < -PSD_TOLERANCE * max(1.0, float(np.abs(entries).max())):
        raise InvalidCovarianceError(f"sample covariance has negative eigenvalue {min_eig:.3e}")

    logger.debug(f"Sample covariance from n={n}, p={p} (center={center}, standardize={standardize})")
    return SampleCovariance(p=p, entries=entries, n=n)


def covariance_from_matrix(matrix, n=None) -> SampleCovariance:
    """Wrap a user-supplied covariance matrix, checking the diagonal"""
    entries = np.asarray(matrix, dtype=float)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise InvalidCovarianceError(f"covariance must be square, got shape {entries.shape}")
    if entries.shape[0] < 2:
        raise InsufficientDataError("need at least 2 variables")
    if not np.all(np.diag(entries) > 0):
        raise InvalidCovarianceError("covariance diagonal must be positive")
    return SampleCovariance(p=entries.shape[0], entries=entries, n=n)


def pattern_of(state: PrecisionState, tol: float = 0.0) -> SparsityPattern:
    """Bit set wherever |offdiag| > tol"""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return SparsityPattern(p=state.p, bits=np.abs(state.offdiag) > tol)
