"""Seed fan-out: independent generators keyed by (master seed, tag path).

Each tag is mapped to a 32-bit integer (ints as-is modulo 2**32, strings via
CRC-32) and the resulting word list is fed to ``numpy.random.SeedSequence``,
whose hashing mixes the entropy words. The same (seed, tags) always yields
the same stream, and streams for different tag paths are independent.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(tag) -> int:
    if isinstance(tag, (bool, np.bool_)):
        return int(tag)
    if isinstance(tag, (int, np.integer)):
        return int(tag) % (1 << 32)
    return zlib.crc32(str(tag).encode("utf-8"))


def seed_words(seed: int, *tags) -> list[int]:
    seed = int(seed)
    return [len(tags), seed % (1 << 32), (seed >> 32) % (1 << 32)] + [_word(t) for t in tags]


def derive_rng(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed_words(seed, *tags))))
