"""Named, counter-keyed RNG substreams derived from one master seed."""

from __future__ import annotations

import numpy as np

# stream ids; riders use (RIDER_STREAM, rider_id)
PLACEMENT_STREAM = 0
ORDER_STREAM = 1
RIDER_STREAM = 2
BOOTSTRAP_STREAM = 3


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under the master ``seed``.

    Streams are addressed by spawn key rather than drawn sequentially, so the
    stream for rider 17 is the same no matter how many riders exist or in
    which order they are created.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def rider_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [substream(seed, RIDER_STREAM, i) for i in range(n)]
