"""Named RNG sub-streams derived from one master seed.

Every source of randomness in a run (weight init, protocol construction,
minibatch sampling, gating masks, generator noise, ...) draws from its own
named stream, so e.g. changing the method never perturbs the task protocol.
"""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for (master seed, stream name)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
