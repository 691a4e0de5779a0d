"""Deterministic seed derivation.

Every stochastic step draws its generator from ``derive_seed(root, label)`` so
that a whole run is a pure function of the root seed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels: object) -> int:
    key = ":".join([str(int(root))] + [str(label) for label in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
