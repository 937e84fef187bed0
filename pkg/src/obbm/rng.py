"""Seeded random streams.

Every random draw in the package comes from a PCG64 generator built from a
``numpy.random.SeedSequence`` whose entropy is the 64-bit run seed and whose
spawn key is a tuple of integers naming the purpose (instance id, trial id,
...). Two streams with different keys are statistically independent, and a
stream never depends on how many other streams were created before it, so
evaluation order and worker count cannot change results.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream key components must be non-negative, got {part}")
    return int(part)


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return the generator for ``(seed, *keys)``.

    String key parts are mapped through CRC-32 so callers can write
    ``stream(seed, "arrivals", instance_id, trial)``.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *keys: int | str) -> int:
    """A 64-bit child seed, for handing a stream identity to another process or file."""
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
