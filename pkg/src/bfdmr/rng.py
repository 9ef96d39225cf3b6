"""Deterministic random streams keyed by (seed, purpose...)."""

import zlib

import numpy as np


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode())


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``seed`` and a tuple of ints/strings.

    The same ``(seed, key)`` always yields the same stream, whatever order
    or thread the caller runs in.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
