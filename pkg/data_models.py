"""
Data models and enumerations for bconcord

Pairs (j, k) with j < k are stored in canonical row-major order
(0,1), (0,2), ..., (p-2,p-1). Indices are 0-based in memory and 1-based in
every file written to disk.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from errors import (
    ConstraintViolationError,
    DimensionMismatchError,
    ImproperPosteriorError,
    InvalidCovarianceError,
)


class DiagMode(Enum):
    """How the diagonal is updated in each sweep"""
    MODE = "mode"
    DISCRETIZED = "discretized"
    FIXED = "fixed"


class Prior(Enum):
    """Prior on the off-diagonal entries"""
    SPIKE_SLAB = "spike-slab"
    HORSESHOE = "horseshoe"


def n_pairs(p: int) -> int:
    return p * (p - 1) // 2


@lru_cache(maxsize=64)
def pair_indices(p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column arrays of all pairs j < k in canonical order"""
    rows, cols = np.triu_indices(p, k=1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def flatten(j: int, k: int, p: int) -> int:
    """Canonical flat position of the unordered pair {j, k}"""
    if j == k or not (0 <= j < p and 0 <= k < p):
        raise IndexError(f"({j}, {k}) is not an off-diagonal pair for p={p}")
    if j > k:
        j, k = k, j
    return j * p - j * (j + 1) // 2 + (k - j - 1)


def unflatten(flat: int, p: int) -> Tuple[int, int]:
    if not 0 <= flat < n_pairs(p):
        raise IndexError(f"flat index {flat} out of range for p={p}")
    rows, cols = pair_indices(p)
    return int(rows[flat]), int(cols[flat])


@dataclass(frozen=True)
class PairIndex:
    """One off-diagonal position, both as (j, k) and as its flat slot"""
    j: int
    k: int
    flat: int

    @classmethod
    def of(cls, j: int, k: int, p: int) -> "PairIndex":
        if j > k:
            j, k = k, j
        return cls(j=j, k=k, flat=flatten(j, k, p))

    @classmethod
    def at(cls, flat: int, p: int) -> "PairIndex":
        j, k = unflatten(flat, p)
        return cls(j=j, k=k, flat=flat)


@dataclass
class PrecisionState:
    """Symmetric matrix with strictly positive diagonal, stored as diag + upper triangle"""
    p: int
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        self.offdiag = np.asarray(self.offdiag, dtype=float)
        if self.diag.shape != (self.p,):
            raise DimensionMismatchError(f"diag has shape {self.diag.shape}, expected ({self.p},)")
        if self.offdiag.shape != (n_pairs(self.p),):
            raise DimensionMismatchError(
                f"offdiag has shape {self.offdiag.shape}, expected ({n_pairs(self.p)},)"
            )
        if not np.all(self.diag > 0):
            raise InvalidCovarianceError("diagonal entries of a precision state must be > 0")

    @classmethod
    def identity(cls, p: int) -> "PrecisionState":
        return cls(p=p, diag=np.ones(p), offdiag=np.zeros(n_pairs(p)))

    @classmethod
    def from_dense(cls, matrix: np.ndarray) -> "PrecisionState":
        matrix = np.asarray(matrix, dtype=float)
        p = matrix.shape[0]
        rows, cols = pair_indices(p)
        return cls(p=p, diag=np.diag(matrix).copy(), offdiag=matrix[rows, cols].copy())

    def dense(self) -> np.ndarray:
        rows, cols = pair_indices(self.p)
        matrix = np.diag(self.diag)
        matrix[rows, cols] = self.offdiag
        matrix[cols, rows] = self.offdiag
        return matrix

    def get(self, j: int, k: int) -> float:
        if j == k:
            return float(self.diag[j])
        return float(self.offdiag[flatten(j, k, self.p)])

    def copy(self) -> "PrecisionState":
        return PrecisionState(p=self.p, diag=self.diag.copy(), offdiag=self.offdiag.copy())


@dataclass(frozen=True)
class SparsityPattern:
    """Bitset over the off-diagonal pairs in canonical order"""
    p: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (n_pairs(self.p),):
            raise DimensionMismatchError(f"pattern has {bits.size} bits, expected {n_pairs(self.p)}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, p: int) -> "SparsityPattern":
        return cls(p=p, bits=np.zeros(n_pairs(p), dtype=bool))

    @classmethod
    def from_edges(cls, p: int, edges: List[Tuple[int, int]]) -> "SparsityPattern":
        bits = np.zeros(n_pairs(p), dtype=bool)
        for j, k in edges:
            bits[flatten(j, k, p)] = True
        return cls(p=p, bits=bits)

    @classmethod
    def from_code(cls, p: int, code: int) -> "SparsityPattern":
        """Pattern whose bit i is bit i of the integer ``code``"""
        m = n_pairs(p)
        bits = np.array([(code >> i) & 1 for i in range(m)], dtype=bool)
        return cls(p=p, bits=bits)

    @property
    def density(self) -> int:
        return int(self.bits.sum())

    @property
    def code(self) -> int:
        return int(sum(1 << int(i) for i in np.flatnonzero(self.bits)))

    def edges(self) -> List[Tuple[int, int]]:
        rows, cols = pair_indices(self.p)
        return [(int(rows[i]), int(cols[i])) for i in np.flatnonzero(self.bits)]

    def vertex_degrees(self) -> np.ndarray:
        rows, cols = pair_indices(self.p)
        degrees = np.zeros(self.p, dtype=np.int64)
        np.add.at(degrees, rows[self.bits], 1)
        np.add.at(degrees, cols[self.bits], 1)
        return degrees

    def issubset(self, other: "SparsityPattern") -> bool:
        return bool(np.all(~self.bits | other.bits))

    def __eq__(self, other):
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return self.p == other.p and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.p, self.code))


@dataclass(frozen=True)
class SampleCovariance:
    """Symmetric p x p matrix S = (1/n) * Y'Y"""
    p: int
    entries: np.ndarray
    n: Optional[int] = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (self.p, self.p):
            raise DimensionMismatchError(f"covariance has shape {entries.shape}, expected ({self.p}, {self.p})")
        if not np.all(np.isfinite(entries)):
            raise InvalidCovarianceError("covariance contains non-finite entries")
        if not np.allclose(entries, entries.T, rtol=0.0, atol=1e-12):
            raise InvalidCovarianceError("covariance is not symmetric")
        entries = 0.5 * (entries + entries.T)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.entries)


@dataclass
class ChainTrace:
    """Running sums over the retained sweeps of one or more chains"""
    p: int
    include_count: np.ndarray
    value_sum: np.ndarray
    diag_sum: np.ndarray
    T: int = 0
    draws: Optional[np.ndarray] = None
    diag_draws: Optional[np.ndarray] = None
    sweep_seconds: List[float] = field(default_factory=list)
    chain_inclusion: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def empty(cls, p: int) -> "ChainTrace":
        m = n_pairs(p)
        return cls(
            p=p,
            include_count=np.zeros(m, dtype=np.int64),
            value_sum=np.zeros(m),
            diag_sum=np.zeros(p),
        )

    def record(self, offdiag: np.ndarray, diag: np.ndarray):
        """Accumulate one retained sweep"""
        self.include_count += offdiag != 0.0
        self.value_sum += offdiag
        self.diag_sum += diag
        self.T += 1

    @property
    def inclusion(self) -> np.ndarray:
        if self.T == 0:
            return np.zeros_like(self.value_sum)
        return self.include_count / self.T

    @property
    def diag_mean(self) -> np.ndarray:
        return self.diag_sum / max(self.T, 1)

    def merge(self, other: "ChainTrace") -> "ChainTrace":
        """Combine two traces; counts and sums add, so the result is order independent"""
        if other.p != self.p:
            raise DimensionMismatchError(f"cannot merge traces for p={self.p} and p={other.p}")

        def _stack(a, b):
            if a is None or b is None:
                return None
            return np.concatenate([a, b], axis=0)

        return ChainTrace(
            p=self.p,
            include_count=self.include_count + other.include_count,
            value_sum=self.value_sum + other.value_sum,
            diag_sum=self.diag_sum + other.diag_sum,
            T=self.T + other.T,
            draws=_stack(self.draws, other.draws),
            diag_draws=_stack(self.diag_draws, other.diag_draws),
            sweep_seconds=self.sweep_seconds + other.sweep_seconds,
            chain_inclusion=(self.chain_inclusion or [self.inclusion])
            + (other.chain_inclusion or [other.inclusion]),
        )


@dataclass
class PosteriorSummary:
    """Inclusion probabilities, point estimate and selected pattern"""
    inclusion: np.ndarray
    estimate: PrecisionState
    selected: SparsityPattern
    threshold: float


@dataclass
class HorseshoeState:
    """Local/global scales and their inverse-gamma auxiliaries"""
    lambda2: np.ndarray
    tau2: float
    nu: np.ndarray
    eps: float

    def __post_init__(self):
        for name in ("lambda2", "nu"):
            values = getattr(self, name)
            if not (np.all(values > 0) and np.all(np.isfinite(values))):
                raise InvalidCovarianceError(f"horseshoe {name} must be positive and finite")
        for name in ("tau2", "eps"):
            value = getattr(self, name)
            if not (value > 0 and np.isfinite(value)):
                raise InvalidCovarianceError(f"horseshoe {name} must be positive and finite")

    @classmethod
    def initial(cls, p: int) -> "HorseshoeState":
        m = n_pairs(p)
        return cls(lambda2=np.ones(m), tau2=1.0, nu=np.ones(m), eps=1.0)


@dataclass
class HorseshoeSummary:
    """Posterior mean and central credible intervals from the horseshoe chain"""
    mean: PrecisionState
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    level: float
    selected: SparsityPattern
    T: int
    sweep_seconds: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class GraphConstraint:
    """Selected graph: entries off its edge set are pinned to zero"""
    p: int
    edges: SparsityPattern

    def __post_init__(self):
        if self.edges.p != self.p:
            raise DimensionMismatchError(f"graph pattern is for p={self.edges.p}, expected {self.p}")

    @property
    def degree(self) -> int:
        degrees = self.edges.vertex_degrees()
        return int(degrees.max()) if degrees.size else 0

    def check_proper(self, n: int):
        if self.degree >= n:
            raise ImproperPosteriorError(
                f"graph degree {self.degree} is not below n={n}; refitted posterior is improper"
            )

    def check_member(self, state: PrecisionState, tol: float = 0.0):
        outside = np.abs(state.offdiag[~self.edges.bits]) > tol
        if np.any(outside):
            raise ConstraintViolationError(
                f"{int(outside.sum())} off-diagonal entries are non-zero outside the graph"
            )


@dataclass
class RefitResult:
    """Refitted posterior: closed-form mode, Gibbs mean and credible intervals"""
    mode: PrecisionState
    mean: PrecisionState
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    level: float
    min_eigenvalue: float
    projected: Optional[PrecisionState] = None
    mean_projected: Optional[PrecisionState] = None
    sweep_seconds: List[float] = field(default_factory=list)
    diag_ci_lo: Optional[np.ndarray] = None
    diag_ci_hi: Optional[np.ndarray] = None


@dataclass(frozen=True)
class PhiMatrix:
    """Quadratic-form matrix of n*tr(Omega^2 S) in the off-diagonal coordinates"""
    p: int
    entries: np.ndarray


@dataclass
class PatternPosterior:
    """Exact probabilities over patterns, keyed by integer pattern code"""
    p: int
    codes: np.ndarray
    probs: np.ndarray
    log_norm: float

    def as_dict(self) -> Dict[int, float]:
        return {int(c): float(pr) for c, pr in zip(self.codes, self.probs)}

    def top(self, count: int = 50) -> List[Tuple[SparsityPattern, float]]:
        order = np.argsort(-self.probs, kind="stable")[:count]
        return [(SparsityPattern.from_code(self.p, int(self.codes[i])), float(self.probs[i])) for i in order]


@dataclass
class AccuracyReport:
    """Edge recovery counts and derived metrics"""
    tp: int
    tn: int
    fp: int
    fn: int
    sp: float
    se: float
    mcc: float
    rel_frobenius: Optional[float] = None


@dataclass
class RunManifest:
    """Provenance embedded in every JSON output"""
    command: str
    config: Dict[str, Any]
    seed: int
    version: str
    input_digests: Dict[str, str] = field(default_factory=dict)
    duration_seconds: float = 0.0
    timing: Dict[str, float] = field(default_factory=dict)
