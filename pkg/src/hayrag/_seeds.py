"""Stable seed derivation.

All randomness in the library flows from one root seed. Stage and
per-item seeds are derived by hashing, never by Python's salted hash(),
so runs are reproducible across processes and platforms.
"""

import hashlib

import numpy as np


def derive_seed(root: int, *parts) -> int:
    """Derive a 64-bit seed from a root seed and any hashable parts."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode("utf-8"))
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(root: int, *parts) -> np.random.Generator:
    """Generator seeded from derive_seed(root, *parts)."""
    return np.random.default_rng(derive_seed(root, *parts))
