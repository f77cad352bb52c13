"""Hierarchical, replayable random streams.

A stream is named by ``(seed, path)``.  The pair is hashed into a 128-bit
Philox key, so sibling paths give statistically independent counter-based
streams and the same name always replays the same draws.  Paths are built
as (trial, time step, purpose), which keeps results independent of how
trials are spread over worker processes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

# child indices used under a (trial, step) key
PLANNER = 0
ACTION = 1
ENVIRONMENT = 2


def _key_words(seed: int, path: tuple[int, ...]) -> np.ndarray:
    packed = struct.pack(f"<{1 + len(path)}q", seed, *path)
    digest = hashlib.blake2b(packed, digest_size=16).digest()
    return np.frombuffer(digest, dtype=np.uint64).copy()


@dataclass(frozen=True)
class StreamKey:
    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not -(2**63) <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        # uint64 seeds are folded into the signed range used for packing
        if self.seed >= 2**63:
            object.__setattr__(self, "seed", self.seed - 2**64)
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, index: int) -> "StreamKey":
        return StreamKey(self.seed, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.Philox(0))
        rekey(gen, self)
        return gen


def derive_stream(key: StreamKey, child: int) -> StreamKey:
    """Return the sub-stream ``child`` of ``key``."""
    return key.child(child)


def rekey(gen: np.random.Generator, key: StreamKey) -> np.random.Generator:
    """Reset a Philox-backed generator in place so it replays ``key``.

    Building a fresh ``Philox`` costs roughly twice as much as overwriting
    the state of an existing one, which matters in the per-step loop.
    """
    gen.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.zeros(4, dtype=np.uint64),
                  "key": _key_words(key.seed, key.path)},
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    return gen


def as_generator(stream) -> np.random.Generator:
    """Accept a ``StreamKey`` or an existing generator."""
    if isinstance(stream, StreamKey):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    raise TypeError(f"expected StreamKey or numpy Generator, got {type(stream).__name__}")
