"""Deterministic random streams.

Every random draw in the library comes from a Philox4x64 counter-based
bit generator keyed by ``(seed, stream)``, so independent purposes
(model init, sparsity masks, measurement noise) get independent streams
that are reproducible from the two integers alone.
"""

from __future__ import annotations

import numpy as np

STREAM_MODEL_INIT = 1
STREAM_SPARSE_INIT = 2
STREAM_NOISE = 3


def generator(seed: int, stream: int) -> np.random.Generator:
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be nonnegative")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
