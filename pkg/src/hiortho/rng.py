"""Counter-based random streams.

Every unit of work (split, replication, bootstrap draw) gets its own stream
keyed by ``(seed, *path)``, so results do not depend on execution order or on
how work is spread across processes.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent Philox generator for the key ``(seed, *path)``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def derive_seed(seed: int, *path: int) -> int:
    """A 63-bit integer seed for the key ``(seed, *path)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(p) for p in path])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
