"""Seeded random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
built from ``SeedSequence(seed, spawn_key=(stream, *keys))``. The stream id
separates independent uses of one user seed:

==============  ====================================================
Stream          keys / use
==============  ====================================================
SITES           ``(site,)``: latent state, detections and missingness
                of one simulated site, in that draw order
IMAGES          ``(site,)``: image counts and timestamps for one site
CORRUPT         ``()``: one uniform per record, in record order
FIT_STARTS      ``()``: random optimizer starts, start by start
BOOTSTRAP       ``(replicate,)``: seed of one bootstrap replicate
REPLICATES      ``(replicate,)``: seed of one simulation replicate
==============  ====================================================

Because each site (or replicate) has its own sub-stream, serial and
parallel execution produce identical draws.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np

DEFAULT_SEED = 20211022


class Stream(IntEnum):
    SITES = 1
    IMAGES = 2
    CORRUPT = 3
    FIT_STARTS = 4
    BOOTSTRAP = 5
    REPLICATES = 6


def generator(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, stream: Stream, *keys: int) -> int:
    """A derived 64-bit seed, for handing to functions that take a plain seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, keys)))
    return int(ss.generate_state(1, np.uint64)[0])
