"""Named random streams derived from a single integer seed.

Every consumer asks for a stream by label (plus optional integer keys such
as a block index), so adding a consumer never shifts another one's draws.
"""
import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def seed_sequence(seed: int, label: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(label_key(label), *map(int, keys)))


def stream(seed: int, label: str, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, label, *keys)))
