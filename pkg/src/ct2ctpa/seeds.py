"""Seed derivation so every random stream in a run hangs off one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels) -> int:
    """Derive a child seed from a root seed and a sequence of labels.

    The same (root, labels) always maps to the same 63-bit integer, and
    distinct label paths give independent streams. Labels may be strings or
    integers.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(root: int, *labels) -> np.random.Generator:
    """A numpy Generator seeded from ``derive_seed(root, *labels)``."""
    return np.random.default_rng(derive_seed(root, *labels))
