"""Seed derivation.

Every random draw in the package comes from a ``numpy.random.Generator`` backed by
``PCG64`` and derived from a single integer seed. Child streams are addressed by a
name plus integer indices so that, for example, the noise added to record 17 of
class 3 does not depend on how many records were generated before it or on the
number of worker processes.
"""

from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for the named child stream ``name[indices]`` of ``seed``."""
    key = (_name_key(name), *(int(i) for i in indices))
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(sequence))
