"""Deterministic, portable random streams.

Every stochastic choice in the package flows through a named PCG64
stream derived here.  Seeds are derived with sha256 rather than hash()
because hash() of strings is salted per process and would break
run-to-run reproducibility.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map an arbitrary tuple of labels to a stable 64-bit seed.

    Parts are stringified and joined with an unlikely separator, so
    ("a", 1) and ("a1",) derive different seeds.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(*parts) -> np.random.Generator:
    """Fresh generator for the stream named by `parts`."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
