"""Seed derivation. Every random stream in the pipeline comes from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def stable_hash(*keys: object) -> int:
    """64-bit hash of ``keys`` that is stable across processes and Python versions."""
    h = hashlib.blake2b(digest_size=8)
    for k in keys:
        h.update(repr(k).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_seed(seed: int, *keys: object) -> int:
    """Seed for a sub-stream: ``seed XOR hash(keys)``, truncated to 64 bits."""
    return (int(seed) ^ stable_hash(*keys)) & MASK64


def make_rng(seed: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys) if keys else int(seed) & MASK64)
