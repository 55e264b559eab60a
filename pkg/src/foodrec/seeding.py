"""Stable sub-seed derivation so every randomized stage is a pure function
of the master seed plus its own identity (class name, sequence index, ...).
Python's builtin hash() is randomized per process, so we hash explicitly.
"""

import hashlib

import numpy as np


def subseed(master: int, *parts) -> int:
    text = str(int(master)) + "".join(f"|{p}" for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(subseed(master, *parts))
