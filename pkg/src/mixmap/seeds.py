"""Deterministic per-example random streams.

Every random decision in a run is drawn from a generator seeded by hashing
(master seed, example id, stream label).  Streams are therefore independent
of iteration order and worker count, which is what makes parallel builds
byte-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, example_id: str, stream: str = "") -> int:
    """Collapse (master seed, example id, stream label) into a stable 64-bit seed."""
    payload = f"{master_seed}\x1f{example_id}\x1f{stream}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def example_rng(master_seed: int, example_id: str, stream: str = "") -> np.random.Generator:
    """Generator for one example's private stream."""
    return np.random.default_rng(derive_seed(master_seed, example_id, stream))
