"""
Seeded noise source for the simulator.

Contains:
 - splitmix64: expands a user seed into a well-mixed 64-bit state
 - Xorshift64Star: the generator itself (xorshift64* with multiplier 0x2545F4914F6CDD1D)
 - Box-Muller standard normal deviates drawn from it

Being fully specified at the bit level, the same seed gives the same
stream on any platform and numpy version.
"""

from __future__ import annotations

import math
from typing import List

_MASK64 = 0xFFFFFFFFFFFFFFFF
_MULTIPLIER = 0x2545F4914F6CDD1D
_FALLBACK_STATE = 0x9E3779B97F4A7C15


def splitmix64(seed: int) -> int:
    z = (seed + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Xorshift64Star:
    def __init__(self, seed: int):
        state = splitmix64(seed & _MASK64)
        self.state = state or _FALLBACK_STATE
        self._spare: float | None = None

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * _MULTIPLIER) & _MASK64

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        if self._spare is not None:
            value, self._spare = self._spare, None
            return value
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        angle = 2.0 * math.pi * u2
        self._spare = radius * math.sin(angle)
        return radius * math.cos(angle)

    def normals(self, count: int) -> List[float]:
        return [self.normal() for _ in range(count)]
