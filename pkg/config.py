"""
Configuration management module for bconcord

Runtime settings come from the environment (optionally a .env file); model
settings are pydantic models that can be filled from YAML files and CLI flags.
"""

import os
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from data_models import DiagMode, n_pairs


class Config:
    """Runtime configuration read from the environment"""

    def __init__(self):
        load_dotenv()

        # Parallelism
        self.threads = int(os.getenv('BCONCORD_THREADS', str(os.cpu_count() or 1)))

        # Logging
        self.log_level = os.getenv('BCONCORD_LOG_LEVEL', 'INFO').upper()
        self.log_dir = os.getenv('BCONCORD_LOG_DIR', 'logs')
        self.log_file = os.getenv('BCONCORD_LOG_FILE', 'bconcord.log')
        self.log_max_bytes = int(os.getenv('BCONCORD_LOG_MAX_BYTES', str(50 * 1024 * 1024)))
        self.log_backups = int(os.getenv('BCONCORD_LOG_BACKUPS', '5'))

        # Numerics
        self.use_numba = os.getenv('BCONCORD_USE_NUMBA', 'true').lower() == 'true'

        self._validate_config()

    def _validate_config(self):
        """Validate that the environment values are usable"""
        if self.threads < 1:
            raise ValueError("BCONCORD_THREADS must be at least 1")
        if self.log_level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f"BCONCORD_LOG_LEVEL '{self.log_level}' is not a logging level")
        if self.log_backups < 0 or self.log_max_bytes <= 0:
            raise ValueError("log rotation settings must be positive")


PositiveScalarOrList = Union[float, List[float]]


def _positive(value, name: str):
    values = np.atleast_1d(np.asarray(value, dtype=float))
    if values.size == 0 or not np.all(values > 0) or not np.all(np.isfinite(values)):
        raise ValueError(f"{name} must be positive and finite")
    return value


def broadcast(value, size: int, name: str) -> np.ndarray:
    """Scalar-or-vector setting as a float vector of length ``size``"""
    values = np.asarray(value, dtype=float)
    if values.ndim == 0:
        return np.full(size, float(values))
    if values.shape != (size,):
        raise ValueError(f"{name} has length {values.size}, expected {size}")
    return values.astype(float, copy=True)


class GammaHyper(BaseModel):
    """Gamma(r, s) prior on the shrinkage parameters"""
    model_config = ConfigDict(frozen=True)

    r: float = Field(default=1e-4, gt=0)
    s: float = Field(default=1e-8, gt=0)


class SpikeSlabConfig(BaseModel):
    """Settings of the spike-and-slab sampler"""
    model_config = ConfigDict(arbitrary_types_allowed=True, validate_assignment=False)

    q: float = Field(default=0.5, gt=0, lt=1)
    lam: Any = Field(default=1.0, description="slab precision, scalar or one per pair")
    gamma: Any = Field(default=1.0, description="diagonal exponential rate, scalar or one per variable")
    hyper: Optional[GammaHyper] = None
    tau: Optional[int] = Field(default=None, ge=1, description="cap on the number of non-zero pairs")
    burn_in: int = Field(default=2000, ge=1)
    keep: int = Field(default=2000, ge=1)
    thin: int = Field(default=1, ge=1)
    diag_mode: DiagMode = DiagMode.MODE
    store_draws: bool = False

    @field_validator('lam')
    @classmethod
    def _check_lam(cls, v):
        return _positive(v, 'lambda')

    @field_validator('gamma')
    @classmethod
    def _check_gamma(cls, v):
        return _positive(v, 'gamma')

    def lambda_vector(self, p: int) -> np.ndarray:
        return broadcast(self.lam, n_pairs(p), 'lambda')

    def gamma_vector(self, p: int) -> np.ndarray:
        return broadcast(self.gamma, p, 'gamma')

    def tau_cap(self, p: int) -> int:
        """Effective cap; no cap means every pair may be included"""
        m = n_pairs(p)
        if self.tau is None:
            return m
        if self.tau > m:
            raise ValueError(f"tau={self.tau} exceeds the {m} off-diagonal pairs for p={p}")
        return self.tau

    def echo(self) -> Dict[str, Any]:
        """JSON-safe view of the settings"""
        data = self.model_dump(mode='json', exclude={'lam', 'gamma'})
        data['lam'] = _echo_value(self.lam)
        data['gamma'] = _echo_value(self.gamma)
        return data


class HorseshoeConfig(BaseModel):
    """Settings of the horseshoe sampler"""
    gamma: float = Field(default=1.0, gt=0, description="diagonal exponential rate")
    burn_in: int = Field(default=2000, ge=1)
    keep: int = Field(default=2000, ge=1)
    thin: int = Field(default=1, ge=1)
    ci_level: float = Field(default=0.95, gt=0, lt=1)
    diag_mode: DiagMode = DiagMode.MODE

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode='json')


class RefitConfig(BaseModel):
    """Settings of the refitted-posterior Gibbs sampler"""
    sweeps: int = Field(default=4000, ge=1)
    burn_in: int = Field(default=200, ge=0)
    ci_level: float = Field(default=0.95, gt=0, lt=1)
    eps: float = Field(default=1e-6, gt=0)

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode='json')


class TruthSpec(BaseModel):
    """Ground-truth precision matrix generator settings"""
    p: int = Field(ge=2)
    density: float = Field(default=0.04, ge=0, lt=1)
    magnitude_low: float = Field(default=0.4, gt=0)
    magnitude_high: float = Field(default=0.6, gt=0)
    diag_margin: float = Field(default=0.5, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode='after')
    def _check_range(self):
        if self.magnitude_low > self.magnitude_high:
            raise ValueError("magnitude_low must not exceed magnitude_high")
        return self

    @property
    def edge_count(self) -> int:
        return int(np.ceil(self.density * n_pairs(self.p) - 1e-12))


class BenchSpec(BaseModel):
    """Replicated simulation benchmark"""
    p: int = Field(ge=2)
    n: int = Field(ge=2)
    density: float = Field(default=0.04, ge=0, lt=1)
    reps: int = Field(default=10, ge=1)
    method: str = Field(default='bssc')
    seed: int = Field(default=0, ge=0, lt=2**64)
    burn_in: int = Field(default=2000, ge=1)
    keep: int = Field(default=2000, ge=1)
    q: float = Field(default=0.5, gt=0, lt=1)
    r: float = Field(default=1e-4, gt=0)
    s: float = Field(default=1e-8, gt=0)
    hyper: bool = Field(default=False, description="resample lambda and gamma from Gamma(r, s)")
    threshold: float = Field(default=0.5, gt=0, lt=1)
    refit_sweeps: int = Field(default=2000, ge=1)
    ci_level: float = Field(default=0.95, gt=0, lt=1)

    @field_validator('method')
    @classmethod
    def _check_method(cls, v):
        if v not in ('bssc', 'bssc+refit', 'bhsc'):
            raise ValueError(f"unknown method '{v}', expected bssc, bssc+refit or bhsc")
        return v

    def spike_slab(self) -> SpikeSlabConfig:
        return SpikeSlabConfig(
            q=self.q,
            hyper=GammaHyper(r=self.r, s=self.s) if self.hyper else None,
            burn_in=self.burn_in,
            keep=self.keep,
        )


def _echo_value(value):
    values = np.asarray(value, dtype=float)
    if values.ndim == 0:
        return float(values)
    return [float(v) for v in values]


def load_yaml(path: Optional[str]) -> Dict[str, Any]:
    """Read a YAML config file; a missing path means no overrides"""
    if not path:
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    return data


def merge_settings(defaults: Dict[str, Any], file_values: Dict[str, Any], cli_values: Dict[str, Any]) -> Dict[str, Any]:
    """CLI flags > config file > defaults; CLI values of None mean 'not given'"""
    merged = dict(defaults)
    merged.update({k: v for k, v in file_values.items() if v is not None})
    merged.update({k: v for k, v in cli_values.items() if v is not None})
    return merged
