"""
Entry-wise Gibbs kernels shared by the spike-and-slab, horseshoe and refit samplers

The off-diagonal pass is written in the subset of Python that numba can
compile. All random variates are drawn by the caller from a numpy Generator
and passed in, so the compiled and the interpreted kernel consume identical
streams and return identical states.
"""

import logging
import math

import numpy as np
from scipy.special import ndtr, ndtri

logger = logging.getLogger(__name__)

try:
    from numba import njit
    HAS_NUMBA = True
except Exception:
    njit = None
    HAS_NUMBA = False

# Returned instead of a density when a_jk <= 0 was met
INVALID_PRECISION = -1

# Standardized truncation point above which inverse-CDF sampling loses accuracy
TAIL_SWITCH = 5.0

_numba_enabled = HAS_NUMBA


def set_numba_enabled(enabled: bool):
    global _numba_enabled
    _numba_enabled = bool(enabled) and HAS_NUMBA
    logger.debug(f"numba kernels {'enabled' if _numba_enabled else 'disabled'}")


def numba_active() -> bool:
    return _numba_enabled


def _offdiag_pass_py(omega, W, S, n, rows, cols, slab_add, log_odds, spike, cap, density, u, z):
    """
    One visit of every pair (rows[i], cols[i]) in order.

    omega is the dense symmetric state, W = omega @ S is kept in sync. For a
    spike-and-slab pass the entry is zero with probability 1 - p_jk; otherwise
    it is drawn from N(-b/a, 1/(n a)). Inclusions that would push the number of
    non-zero pairs above ``cap`` are refused. Returns the new density.
    """
    m = rows.shape[0]
    p = omega.shape[0]
    for idx in range(m):
        j = rows[idx]
        k = cols[idx]
        old = omega[j, k]
        s_sum = S[j, j] + S[k, k]
        a = s_sum + slab_add[idx]
        if not a > 0.0:
            return INVALID_PRECISION
        b = W[j, k] + W[k, j] - old * s_sum
        mean = -b / a
        sd = 1.0 / math.sqrt(n * a)

        if spike:
            log_c = log_odds[idx] - 0.5 * math.log(n * a) + n * b * b / (2.0 * a)
            if log_c >= 0.0:
                prob = 1.0 / (1.0 + math.exp(-log_c))
            else:
                e = math.exp(log_c)
                prob = e / (1.0 + e)
            include = u[idx] < prob
            if include and old == 0.0 and density >= cap:
                include = False
            new = mean + sd * z[idx] if include else 0.0
        else:
            new = mean + sd * z[idx]

        if old == 0.0 and new != 0.0:
            density += 1
        elif old != 0.0 and new == 0.0:
            density -= 1

        delta = new - old
        if delta != 0.0:
            omega[j, k] = new
            omega[k, j] = new
            for c in range(p):
                W[j, c] += delta * S[k, c]
                W[k, c] += delta * S[j, c]
    return density


# the compiled pass releases the GIL
JIT_OPTIONS = {"cache": False, "nogil": True}

if HAS_NUMBA:
    _offdiag_pass_jit = njit(**JIT_OPTIONS)(_offdiag_pass_py)
else:
    _offdiag_pass_jit = None


def offdiag_pass(omega, W, S, n, rows, cols, slab_add, log_odds, spike, cap, density, u, z) -> int:
    kernel = _offdiag_pass_jit if _numba_enabled else _offdiag_pass_py
    return kernel(
        omega, W, S, float(n), rows, cols, slab_add, log_odds, bool(spike), int(cap), int(density), u, z
    )


def diag_mode(s_diag: np.ndarray, linear: np.ndarray, n: float) -> np.ndarray:
    """
    Unique positive root of n*s*w^2 + linear*w - n = 0, the maximizer of
    n*log(w) - (n/2)*s*w^2 - linear*w.
    """
    disc = np.sqrt(linear * linear + 4.0 * n * n * s_diag)
    # Stable form of (-linear + disc) / (2 n s) when linear > 0
    return np.where(
        linear > 0,
        2.0 * n / (linear + disc),
        (-linear + disc) / (2.0 * n * s_diag),
    )


def truncated_normal_positive(mean: np.ndarray, sd: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Draws from N(mean, sd^2) restricted to (0, inf).

    Inverse CDF when the bound is less than TAIL_SWITCH standard deviations
    above the mean, exponential rejection (Robert 1995) further out.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    alpha = -mean / sd
    out = np.empty_like(mean)

    body = alpha < TAIL_SWITCH
    if np.any(body):
        v = 1.0 - rng.random(int(body.sum()))
        upper = ndtr(-alpha[body])
        out[body] = -ndtri(upper * v)

    tail_idx = np.flatnonzero(~body)
    if tail_idx.size:
        a = alpha[tail_idx]
        rate = 0.5 * (a + np.sqrt(a * a + 4.0))
        result = np.empty_like(a)
        pending = np.arange(a.size)
        while pending.size:
            z = a[pending] + rng.standard_exponential(pending.size) / rate[pending]
            accept = rng.random(pending.size) <= np.exp(-0.5 * (z - rate[pending]) ** 2)
            result[pending[accept]] = z[accept]
            pending = pending[~accept]
        out[tail_idx] = result

    return mean + sd * out


def inverse_gamma(shape, rate, rng: np.random.Generator) -> np.ndarray:
    """InvGamma(shape, rate) as rate / Gamma(shape, 1)"""
    return np.asarray(rate, dtype=float) / rng.standard_gamma(shape, size=np.shape(rate))
