"""Deterministic random streams.

Every random draw in the package comes from numpy's PCG64 seeded through a
SeedSequence keyed as [master_seed, stream_tag, *counters]. Streams with
different tags or counters are independent, and a stream is a pure function
of its key, so parallel generation matches sequential generation.
"""

from __future__ import annotations

import numpy as np

STREAM_CODEBOOK = 1
STREAM_BANK = 2
STREAM_CENTROIDS = 3
STREAM_BATCH = 4
STREAM_DRIFT = 5
STREAM_DEAD = 6


def stream(seed: int, tag: int, *counters: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag, *counters])
