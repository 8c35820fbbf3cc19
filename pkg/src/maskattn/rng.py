"""Named random streams derived from one experiment seed."""

import zlib

import numpy as np


def stream(seed, name):
    """Independent generator for component `name` (e.g. "init", "data", "dropout")."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
