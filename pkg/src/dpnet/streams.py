"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, purpose, index)``, so a
stream for replicate 7 or node 12 is the same no matter how many other
replicates or nodes exist, and no matter how work is batched across workers.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {"signal": 1, "noise": 2, "graph": 3, "partition": 4}

_TWO_POW_53 = float(2**53)


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence([int(seed), PURPOSES[purpose], int(index)])
    return np.random.Generator(np.random.Philox(ss))


def replicate_streams(seed: int, purpose: str, replicates: range) -> list[np.random.Generator]:
    return [stream(seed, purpose, r) for r in replicates]


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms in the open interval (0, 1) built from raw 64-bit draws.

    The top 53 bits of each word are used, offset by half an ulp, so the
    result is exactly reproducible and never hits 0 or 1.
    """
    raw = rng.bit_generator.random_raw(size)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) / _TWO_POW_53
