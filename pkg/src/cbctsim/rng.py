"""Deterministic pseudo-random numbers for misalignment sampling.

Uses splitmix64 (Steele, Lea & Flood, 2014): a 64-bit integer generator
whose output depends only on integer arithmetic, so a given seed
reproduces the same stream on every platform and Python build. Uniform
doubles come from the top 53 bits divided by 2**53.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Seeded 64-bit generator with a uniform-double view."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform double in [lo, hi) via the 53-bit division method."""
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + (hi - lo) * u
