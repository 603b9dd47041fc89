"""Deterministic seed fan-out.

One global seed is split into independent stage seeds with a splitmix64
finalizer keyed on stable label hashes, so re-running a single stage
reproduces exactly what the full pipeline would have produced.
"""
from __future__ import annotations

import hashlib
import random

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _label_hash(label) -> int:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *labels) -> int:
    """Sub-seed for ``labels`` below ``seed``; stable across runs and platforms."""
    state = splitmix64(int(seed) & MASK64)
    for label in labels:
        state = splitmix64(state ^ _label_hash(label))
    return state


def py_rng(seed: int, *labels) -> random.Random:
    return random.Random(derive_seed(seed, *labels))


def np_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
