"""Seeded, splittable random streams.

Every consumer derives its generator from ``(seed, *keys)`` so that two
components never share a stream, and reruns with the same seed are
bit-identical (PCG64 is platform independent).
"""
import zlib

import numpy as np

STRATEGY = "strategy"
GENERATOR = "generator"
STREAM = "stream"
DIAGNOSTICS = "diagnostics"


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed, *keys):
    """Return an independent ``np.random.Generator`` for ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
