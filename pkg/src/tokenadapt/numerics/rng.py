"""Seeded, splittable random streams.

A stream is a ``numpy.random.Generator`` over the counter-based Philox bit
generator, keyed by the root seed plus a path of names. The same (seed, path)
always yields the same stream, and distinct paths yield independent streams.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *path):
    """Independent generator for ``path`` under root ``seed`` (unsigned 64-bit)."""
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
