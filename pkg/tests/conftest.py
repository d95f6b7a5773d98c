"""
Shared fixtures for the bconcord test suite
"""

import numpy as np
import pytest

from covariance import sample_covariance
from data_models import PrecisionState
from rng import seeded_rng


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """Keep log files and thread settings out of the developer's environment"""
    monkeypatch.setenv('BCONCORD_LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.setenv('BCONCORD_LOG_LEVEL', 'WARNING')
    monkeypatch.delenv('BCONCORD_THREADS', raising=False)


@pytest.fixture
def rng():
    return seeded_rng(12345)


def random_data(p: int, n: int, seed: int) -> np.ndarray:
    return seeded_rng(seed).standard_normal((n, p))


def random_cov(p: int, n: int = 50, seed: int = 0):
    return sample_covariance(random_data(p, n, seed))


def one_edge_truth(p: int = 3, value: float = 0.5) -> PrecisionState:
    """Diagonally dominant truth with a single edge between the first two variables"""
    offdiag = np.zeros(p * (p - 1) // 2)
    offdiag[0] = value
    diag = np.ones(p)
    diag[:2] += abs(value)
    return PrecisionState(p=p, diag=diag, offdiag=offdiag)
