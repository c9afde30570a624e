"""Counter-based random streams with explicit substream derivation.

Every consumer gets its own ``numpy.random.Generator`` backed by Philox,
keyed by ``SeedSequence(seed, spawn_key=...)``. Two streams with different
keys never share state, so replicas can run in any order or thread.
"""

from typing import Iterable, List, Tuple

import numpy as np

RNG_NAME = "numpy.Philox4x64-10"

# Stage tags used as the first spawn-key component.
STAGE_PARTITION = 1
STAGE_SITES = 2
STAGE_CHAIN = 3
STAGE_REFERENCE = 4
STAGE_DIAGNOSTICS = 5
STAGE_UNIFORM = 6


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for substream ``key`` of ``seed``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def spawn_streams(seed: int, key: Iterable[int], count: int) -> List[np.random.Generator]:
    """Independent streams ``key + (i,)`` for ``i`` in ``range(count)``."""
    base = tuple(int(k) for k in key)
    return [make_stream(seed, *base, i) for i in range(count)]


def seed_record(seed: int, *key: int) -> dict:
    """Metadata stored alongside every random output."""
    return {"rng": RNG_NAME, "seed": int(seed), "spawn_key": list(key)}


def split_batches(total: int, batch: int) -> List[Tuple[int, int]]:
    """``[(start, stop), ...]`` covering ``range(total)`` in chunks of ``batch``."""
    if total <= 0:
        return []
    return [(s, min(s + batch, total)) for s in range(0, total, batch)]
