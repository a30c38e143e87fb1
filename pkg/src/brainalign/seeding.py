"""Labelled seed derivation: every random stream flows from one root seed."""

import hashlib

import numpy as np


def derive_seed(root, *labels):
    """Deterministic 63-bit seed from ``root`` and a path of labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(root, *labels):
    return np.random.default_rng(derive_seed(root, *labels))
