"""Deterministic RNG stream derivation.

Every random draw in the toolkit flows from one global seed. Component
streams are derived by hashing the seed together with a path of string/int
parts (e.g. ("fold", 3, "init")), so results never depend on call order or
thread schedule. SHA-256 keeps the derivation stable across platforms and
Python processes (the builtin hash() is salted and unusable here).
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *parts) -> int:
    """Deterministically map (base_seed, *parts) to a 64-bit stream seed."""
    key = repr((int(base_seed),) + tuple(parts)).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little")


def stream(base_seed: int, *parts) -> np.random.Generator:
    """An independent generator for the component addressed by *parts."""
    return np.random.default_rng(derive_seed(base_seed, *parts))
