"""Counter-based random streams keyed by (seed, index, tag)."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def replicate_rng(seed: int, index: int, tag: str = "") -> np.random.Generator:
    """Independent Philox stream for replicate ``index`` of experiment ``tag``.

    The stream depends only on its key, never on how many other streams
    exist or on the order in which they are consumed.
    """
    if seed is None:
        raise ValueError("an explicit seed is required")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index),
                                 stream_key(tag)])
    return np.random.Generator(np.random.Philox(ss))
