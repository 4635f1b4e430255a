"""Deterministic RNG stream derivation.

Every random stream in the project is derived from an explicit key of the
form (master_seed, label, index, ...).  Keys are expanded through numpy's
SeedSequence (a splitmix-style generator), so distinct keys yield
independent streams and adding new keys never perturbs streams that
already exist.  String key parts are hashed with SHA-256 so the mapping is
stable across processes and platforms.
"""

import hashlib

import numpy as np


def _key_ints(parts):
    out = []
    for p in parts:
        if isinstance(p, (bool,)):
            raise TypeError("bool is not a valid seed key part")
        if isinstance(p, (int, np.integer)):
            out.append(int(p) & 0xFFFFFFFFFFFFFFFF)
        elif isinstance(p, str):
            digest = hashlib.sha256(p.encode("utf-8")).digest()
            out.append(int.from_bytes(digest[:8], "little"))
        else:
            raise TypeError(f"seed key parts must be int or str, got {type(p)!r}")
    return out


def seed_sequence(*parts) -> np.random.SeedSequence:
    """SeedSequence for a key; same key always gives the same sequence."""
    if not parts:
        raise ValueError("seed key must not be empty")
    return np.random.SeedSequence(_key_ints(parts))


def derive_rng(*parts) -> np.random.Generator:
    """Fresh Generator for a key, independent of all other keys."""
    return np.random.default_rng(seed_sequence(*parts))


def derive_seed(*parts) -> int:
    """64-bit integer seed for a key, for APIs that take plain seeds."""
    return int(seed_sequence(*parts).generate_state(1, np.uint64)[0])
