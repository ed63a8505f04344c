"""Named, seedable random streams on the counter-based Philox generator."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``(seed, name)``; same pair, same draws."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (int(seed) << 32) | zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(key=key))


class Streams:
    """Hands out named streams for one run and remembers which were used."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __call__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = stream(self.seed, name)
        return self._streams[name]

    def manifest(self) -> list[str]:
        return [f"{name}\tseed={self.seed}" for name in sorted(self._streams)]


def as_generator(rng, name="default") -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(int(rng), name)
