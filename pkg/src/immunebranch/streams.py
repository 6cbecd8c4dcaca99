"""Reproducible per-episode random streams.

A stream is identified by a master seed and a tuple path (for example
``(cell_index,)`` in a sweep, or a tag separating the two arms of a paired
experiment).  The path is hashed once into a Philox key; episode ``i`` of
the stream then uses the counter block starting at ``[0, 0, i, 0]``.  Philox
is counter-based, so episode streams are disjoint and can be regenerated in
any order on any thread.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream_key", "episode_rng", "normalize_seed"]

_MASK64 = (1 << 64) - 1


def normalize_seed(seed) -> int:
    """Accept an int or the string ``"random"`` and return an unsigned 64-bit seed."""
    if isinstance(seed, str):
        if seed == "random":
            return int(np.random.SeedSequence().entropy) & _MASK64
        seed = int(seed, 0)
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream_key(master_seed: int, path: tuple[int, ...] = ()) -> np.ndarray:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(x) for x in path))
    return ss.generate_state(2, dtype=np.uint64)


def episode_rng(key: np.ndarray, index: int) -> np.random.Generator:
    counter = np.array([0, 0, index, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
