"""Seed derivation.

Every stochastic stage draws from a ``numpy.random.Generator`` backed by
PCG64. Child seeds are derived from ``(master seed, stage label, index)``
through ``numpy.random.SeedSequence`` so that a stage's stream never depends
on how many numbers another stage consumed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def derive_seed(master: int, label: str, *index: int) -> int:
    """Return a 63-bit integer seed for ``label`` (and optional indices)."""
    ss = np.random.SeedSequence(int(master), spawn_key=(_label_key(label), *map(int, index)))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(int(seed)))
