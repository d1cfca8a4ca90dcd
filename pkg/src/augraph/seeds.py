"""Named random sub-streams derived from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    """A 63-bit seed that depends only on ``root`` and the stream names."""
    digest = hashlib.sha256("\x1f".join(map(str, (root,) + names)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
