"""Named random streams derived from one master seed."""

import zlib

import numpy as np


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for ``stream`` (e.g. "data", "init", "shuffle", "holdout")."""
    return np.random.default_rng([int(seed), zlib.crc32(stream.encode())])
