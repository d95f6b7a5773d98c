"""
Reading and writing matrices, patterns and result documents

Matrices are CSV (17 significant digits), everything structured is JSON with
sorted keys. Edge lists in files are 1-based.
"""

import hashlib
import json
import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from data_models import PrecisionState, SparsityPattern, n_pairs, pair_indices
from errors import DimensionMismatchError, InvalidDataError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def read_matrix_csv(path: str, header: bool = False) -> np.ndarray:
    """Numeric CSV as a 2-D float array; rows are observations"""
    try:
        frame = pd.read_csv(path, header=0 if header else None, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise InvalidDataError(f"{path} is empty")
    try:
        values = frame.to_numpy(dtype=float)
    except (TypeError, ValueError):
        raise InvalidDataError(f"{path} contains non-numeric values")
    if values.ndim != 2 or values.size == 0:
        raise InvalidDataError(f"{path} does not hold a matrix")
    if not np.all(np.isfinite(values)):
        raise InvalidDataError(f"{path} contains missing or non-finite values")
    logger.debug(f"Read {values.shape[0]}x{values.shape[1]} matrix from {path}")
    return values


def read_vector_csv(path: str) -> np.ndarray:
    """A single row or a single column of numbers"""
    values = read_matrix_csv(path)
    if min(values.shape) != 1:
        raise InvalidDataError(f"{path} must hold one row or one column, got shape {values.shape}")
    return values.ravel()


def write_matrix_csv(path: str, matrix, columns: Optional[List[str]] = None):
    frame = pd.DataFrame(np.atleast_2d(np.asarray(matrix, dtype=float)), columns=columns)
    frame.to_csv(path, index=False, header=columns is not None, float_format=FLOAT_FORMAT)
    logger.debug(f"Wrote {frame.shape[0]}x{frame.shape[1]} matrix to {path}")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def dumps(payload: Dict[str, Any]) -> str:
    """Canonical JSON text: sorted keys, NaN and inf written as null"""
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str, payload: Dict[str, Any]):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps(payload))
    logger.debug(f"Wrote {path}")


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidDataError(f"{path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise InvalidDataError(f"{path} must contain a JSON object")
    return data


def file_digest(path: str) -> str:
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            sha.update(chunk)
    return sha.hexdigest()


def pair_table(p: int) -> List[List[int]]:
    """1-based (j, k) for every flat position"""
    rows, cols = pair_indices(p)
    return [[int(j) + 1, int(k) + 1] for j, k in zip(rows, cols)]


def pattern_to_json(pattern: SparsityPattern) -> Dict[str, Any]:
    return {'p': pattern.p, 'edges': [[j + 1, k + 1] for j, k in pattern.edges()]}


def pattern_from_json(data: Dict[str, Any]) -> SparsityPattern:
    """
    Pattern from a graph document {p, edges: [[j, k], ...]} (1-based) or from
    any result carrying a flat 0/1 ``selected`` array. Result documents
    wrapped as {"result": ..., "manifest": ...} are unwrapped first.
    """
    if 'result' in data and isinstance(data['result'], dict):
        data = data['result']
    if 'p' not in data:
        raise InvalidDataError("pattern document has no 'p'")
    p = int(data['p'])
    if 'edges' in data:
        edges = []
        for edge in data['edges']:
            if len(edge) != 2:
                raise InvalidDataError(f"edge {edge} is not a pair")
            j, k = int(edge[0]) - 1, int(edge[1]) - 1
            if j == k or not (0 <= j < p and 0 <= k < p):
                raise InvalidDataError(f"edge {edge} is not an off-diagonal pair of a {p}x{p} matrix")
            edges.append((j, k))
        return SparsityPattern.from_edges(p, edges)
    if 'selected' in data:
        bits = np.asarray(data['selected'], dtype=int)
        if bits.shape != (n_pairs(p),):
            raise DimensionMismatchError(f"'selected' has {bits.size} entries, expected {n_pairs(p)}")
        return SparsityPattern(p=p, bits=bits.astype(bool))
    raise InvalidDataError("pattern document needs 'edges' or 'selected'")


def state_to_json(state: PrecisionState) -> Dict[str, Any]:
    return {'diag': state.diag, 'offdiag': state.offdiag}


def state_from_json(data: Dict[str, Any], key: str = 'estimate') -> PrecisionState:
    """PrecisionState stored under ``key`` of a (possibly wrapped) result document"""
    if 'result' in data and isinstance(data['result'], dict):
        data = data['result']
    if key not in data:
        raise InvalidDataError(f"document has no '{key}'")
    block = data[key]
    diag = np.asarray(block['diag'], dtype=float)
    return PrecisionState(p=diag.size, diag=diag, offdiag=np.asarray(block['offdiag'], dtype=float))
