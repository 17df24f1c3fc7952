"""Named random substreams derived from one master seed.

``stream(seed, "channels", 5)`` and ``stream(seed, "graphs", 5)`` are
independent, so any one randomness source can be held fixed while others vary.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode())


def seed_sequence(master: int, name: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master), spawn_key=(_key(name), *map(int, keys)))


def stream(master: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, name, *keys))


def derive_seed(master: int, name: str, *keys: int) -> int:
    """A plain integer seed for the given substream, e.g. for diagnostics."""
    return int(seed_sequence(master, name, *keys).generate_state(1, np.uint64)[0])
