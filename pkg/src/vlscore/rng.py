"""Seeded random streams.

Everything random in this package draws from numpy's Philox4x64 generator,
a counter-based algorithm with fixed, published round constants, seeded
through SeedSequence. Independent streams are derived from the root seed
plus integer stream ids, so parallel and serial runs produce identical
draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def make_rng(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


def stable_id(text: str, length: int = 16) -> str:
    """Deterministic short hex id for a text string (blake2b digest prefix)."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=length // 2).hexdigest()
