"""Named, reproducible RNG streams.

Every random choice in the toolkit flows from one top-level seed through
named substreams, so that pipeline stages can be re-run independently and
still reproduce bit-identical outputs.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable 32-bit key for a substream name (CRC32 of the UTF-8 bytes)."""
    return zlib.crc32(name.encode("utf-8"))


def rng_for(seed: int, *names: str) -> np.random.Generator:
    """PCG64 generator for the substream identified by ``names`` under ``seed``.

    Same (seed, names) always yields the same stream; distinct names yield
    independent streams.
    """
    entropy = [int(seed)] + [stream_key(n) for n in names]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
