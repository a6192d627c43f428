"""Keyed seed derivation and counter-based random streams.

Every stochastic component asks for a stream by naming it:
``make_rng(master_seed, "sim", disease, "train", replicate)``.  The labels
are hashed together with the parent seed, so adding a new consumer never
shifts the streams of existing ones and results do not depend on the order
in which tasks are scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(seed: int, *labels) -> int:
    """Map (seed, labels...) to a 63-bit integer via BLAKE2b."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for label in labels:
        h.update(b"\x1f")
        h.update(repr(label).encode())
    return int.from_bytes(h.digest(), "little") & _MASK63


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Philox generator for the stream named by ``labels`` under ``seed``."""
    key = derive_seed(seed, *labels)
    return np.random.Generator(np.random.Philox(key=key))
