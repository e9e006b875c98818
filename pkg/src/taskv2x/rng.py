"""Keyed random-number substreams.

Every draw in a run is a pure function of (master seed, stream id, epoch,
position), so toggling one mechanism never perturbs the draws feeding
another. Streams are realized as fresh PCG64 generators seeded from a
SeedSequence over the key tuple; positions are indices into per-epoch
vectors drawn in one shot.
"""

from __future__ import annotations

import numpy as np

# Stream identifiers. Keep values stable: run-records and golden tests
# depend on them.
PLACEMENT = 0
DETECTION = 1
CHANNEL = 2
BETA = 3
SOFTRED = 4
SLOTS = 5


class RngStreams:
    """Factory for keyed generators under one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def generator(self, stream: int, epoch: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence([self.master_seed, int(stream), int(epoch)])
        return np.random.Generator(np.random.PCG64(seq))

    def uniforms(self, stream: int, epoch: int, n: int) -> np.ndarray:
        """Per-epoch uniform vector; entry i is the draw at position i."""
        return self.generator(stream, epoch).random(n)

    def integers(self, stream: int, epoch: int, n: int, high: int) -> np.ndarray:
        return self.generator(stream, epoch).integers(0, high, size=n)


def persistent_uniform(master_seed: int, tag: int, a, b, c) -> np.ndarray:
    """Epoch-free uniform keyed by three id arrays (splitmix64 hash).

    Used for frozen per-(transmitter, receiver, variable) draws that must
    not change across epochs.
    """
    x = (np.uint64(master_seed) * np.uint64(0x9E3779B97F4A7C15)
         ^ np.uint64(tag) * np.uint64(0xBF58476D1CE4E5B9))
    with np.errstate(over="ignore"):
        h = (np.asarray(a, dtype=np.uint64) * np.uint64(0x94D049BB133111EB) ^ x)
        h ^= np.asarray(b, dtype=np.uint64) * np.uint64(0xD6E8FEB86659FD93)
        h ^= np.asarray(c, dtype=np.uint64) * np.uint64(0xA0761D6478BD642F)
        # splitmix64 finalizer
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
    return h.astype(np.float64) / float(2**64)
