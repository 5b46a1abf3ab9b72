"""Named random sub-streams derived from one master seed.

Every stage takes its generator from ``stream(seed, name)`` so a stage can be
re-run alone and get the same draws it gets inside the full pipeline.
Replicate-level generators come from ``split`` before any work is scheduled,
so serial and threaded runs consume identical streams.
"""

import zlib

import numpy as np


def stream(seed, name):
    """Generator for the named sub-stream of master ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def split(rng, n):
    """``n`` independent child generators drawn from ``rng``."""
    seeds = rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)
    return [np.random.default_rng(int(s)) for s in seeds]


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
