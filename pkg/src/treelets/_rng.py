"""Seed splitting.

Every random stream is derived from one 64-bit root seed plus a key path
(strings or integers), e.g. ``child_rng(seed, "bootstrap", b)`` for the b-th
bootstrap replicate. Keys are hashed into the ``spawn_key`` of a
``numpy.random.SeedSequence``, so a stream depends only on (seed, keys) and
never on the order in which streams are requested. Serial and parallel runs
therefore draw identical numbers.
"""

import zlib

import numpy as np


def _key_word(k):
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return zlib.crc32(str(k).encode("utf-8"))


def child_rng(seed, *keys):
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(_key_word(k) for k in keys))
    return np.random.default_rng(ss)
