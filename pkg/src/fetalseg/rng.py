"""Deterministic, hierarchical random streams.

All randomness in the package flows from a single root seed through named
substreams.  A substream is identified by a path of keys (strings or
integers); the same (seed, path) always yields the same counter-based
generator, independent of how many other streams were consumed and of any
parallel execution order.  This is what makes parallel and serial runs of
the phantom generator, the augmentation pipeline and the experiment
commands produce identical output.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = ["StreamKey", "substream"]


def _key_to_int(key: str | int) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    # crc32 is stable across platforms and Python versions
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *path: str | int) -> np.random.Generator:
    """Return the generator for the substream identified by ``path``."""
    spawn_key = tuple(_key_to_int(k) for k in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class StreamKey:
    """A position in the stream hierarchy: a root seed plus a key path."""

    seed: int
    path: tuple[int, ...] = field(default_factory=tuple)

    def child(self, *keys: str | int) -> "StreamKey":
        return StreamKey(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        return substream(self.seed, *self.path)
