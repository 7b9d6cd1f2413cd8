"""Counter-based random stream derivation.

Every stochastic site in the package draws from a Generator obtained via
``derive(seed, component, counter)``.  Streams are keyed by hashing the
(seed, component, counter) triple, so they are independent of call order,
survive process restarts, and make resumed runs bit-identical: a training
step, a sample index, or an eval image each owns its own stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(seed: int, component: str, counter: int) -> bytes:
    text = f"{seed}:{component}:{counter}".encode()
    return hashlib.blake2b(text, digest_size=16).digest()


def derive(seed: int, component: str, counter: int = 0) -> np.random.Generator:
    """Return the Generator owned by (seed, component, counter)."""
    key = np.frombuffer(_key(seed, component, counter), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, component: str, counter: int = 0) -> int:
    """Collapse a stream identity to a plain integer seed (for sub-seeding)."""
    return int(np.frombuffer(_key(seed, component, counter), dtype=np.uint64)[0])
