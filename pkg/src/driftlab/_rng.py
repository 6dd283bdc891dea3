"""Seed derivation and counter-based random streams.

Every random draw in the lab comes from a Philox generator keyed by a
64-bit seed derived from ``(master_seed, *labels)``. Labels are hashed with
BLAKE2b, so a stream is fully identified by its labels and never depends on
how many draws other components have made.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Hash a master seed and a label path into an unsigned 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def stream(master: int, *labels) -> np.random.Generator:
    """Return a fresh Philox generator for the given label path."""
    return np.random.Generator(np.random.Philox(key=derive_seed(master, *labels)))
