"""Named seed streams derived from a single master seed."""

from __future__ import annotations

import hashlib

import numpy as np

STREAMS = ("data", "folds", "init", "batches")


def derive_seed(master: int, stream: str, *keys: object) -> int:
    """Hash ``master`` with a stream name (and optional sub-keys) into a 32-bit seed.

    Streams in use: ``data`` (phantom cohort), ``folds`` (fold plan),
    ``init`` (parameter initialisation) and ``batches`` (minibatch order).
    """
    text = ":".join([str(int(master)), stream, *(str(k) for k in keys)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def rng(master: int, stream: str, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, stream, *keys))
