"""Counter-based deterministic RNG streams.

Every source of randomness in the package draws from a Philox generator
keyed by hashing a tuple of labels (seed, purpose, step, ...). Streams are
therefore independent of call order and batch composition, and "RNG state"
reduces to the labels themselves, which makes checkpoint resume exact.
"""

import hashlib

import numpy as np


def make_rng(*parts) -> np.random.Generator:
    """A fresh Generator keyed by the given labels (ints or strings)."""
    tag = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
