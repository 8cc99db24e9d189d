"""Deterministic seed derivation.

Every randomized stage draws from its own generator seeded by
mix(global_seed, purpose_tag, case_id), so results do not depend on worker
count, scheduling, or on which other stages ran first.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(global_seed: int, purpose: str, case_id: str = "") -> int:
    """Stable 64-bit seed for one (purpose, case) stream."""
    h = hashlib.blake2b(digest_size=8)
    h.update((int(global_seed) & _MASK64).to_bytes(8, "little"))
    h.update(purpose.encode("utf-8"))
    h.update(b"\x00")
    h.update(case_id.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def rng_for(global_seed: int, purpose: str, case_id: str = "") -> np.random.Generator:
    """PCG64 generator for one derived stream."""
    return np.random.default_rng(derive_seed(global_seed, purpose, case_id))
