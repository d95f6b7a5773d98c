"""
Seeded random number streams

Every consumer gets its own Philox stream keyed by (seed, stream id), so data
generation and each chain never share draws and results do not depend on the
order in which parallel workers run.
"""

import numpy as np

# Stream ids. Chains use CHAIN_BASE + chain index, replicates shift by REP_STRIDE.
DATA_STREAM = 0
TRUTH_STREAM = 1
REFIT_STREAM = 2
CHAIN_BASE = 16
REP_STRIDE = 1 << 20

_MASK64 = (1 << 64) - 1


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair"""
    if not (0 <= seed <= _MASK64 and 0 <= stream <= _MASK64):
        raise ValueError(f"seed and stream must be unsigned 64-bit integers, got ({seed}, {stream})")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(sequence))


def chain_stream(chain: int, replicate: int = 0) -> int:
    return replicate * REP_STRIDE + CHAIN_BASE + chain


def replicate_stream(base: int, replicate: int) -> int:
    return replicate * REP_STRIDE + base
