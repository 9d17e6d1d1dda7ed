"""Deterministic, seedable random state with derivable sub-streams.

All stochastic operations in this package draw from an explicit
:class:`RngState`.  A state is fully determined by a 64-bit ``seed`` and a
64-bit ``stream`` counter; the underlying bit generator is counter-based
(Philox), so distinct streams are separated by 2**128 blocks of output and
never overlap.  Sub-streams for parallel or structured work are derived by
index with a splitmix64-style hash, which keeps derivation order-free.
"""

from __future__ import annotations

import copy as _copy

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One splitmix64 scrambling round (Steele et al. finalizer)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class RngState:
    """Seedable random state: (seed, stream) fully determines the sequence.

    Parameters
    ----------
    seed : int
        64-bit unsigned seed (wider inputs are masked).
    stream : int
        64-bit stream counter.  States with the same seed but different
        streams produce statistically independent sequences.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        # Counter word 2 carries the stream: 2**128 blocks of separation.
        bitgen = np.random.Philox(key=self.seed, counter=self.stream << 128)
        self._gen = np.random.Generator(bitgen)

    @property
    def generator(self) -> np.random.Generator:
        """The wrapped numpy Generator (stateful; advances on use)."""
        return self._gen

    def derive(self, index: int) -> "RngState":
        """Independent sub-stream for ``index``, reproducible and order-free."""
        child = _splitmix64(self.stream ^ _splitmix64((int(index) + 1) & _MASK64))
        return RngState(self.seed, child)

    def copy(self) -> "RngState":
        """Clone including the current generator position."""
        dup = RngState(self.seed, self.stream)
        dup._gen.bit_generator.state = _copy.deepcopy(self._gen.bit_generator.state)
        return dup

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngState(seed={self.seed}, stream={self.stream})"
