"""Named random sub-streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *keys)``.

    Different names never share a stream, so adding draws in one module
    cannot shift the randomness of another.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, stream_key(name), *keys]))


def derive_seed(seed: int, name: str, *keys: int) -> int:
    return int(substream(seed, name, *keys).integers(0, 2**62))
