"""Deterministic splitmix64 PRNG with Box-Muller gaussians.

Identical seeds yield identical streams on every platform; nothing here
depends on numpy's RNG or on process state.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def uniform(self) -> float:
        """Uniform in [0, 1): top 53 bits of the next output."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def gaussians(self, n: int) -> list[float]:
        """n standard gaussians via Box-Muller on consecutive uniforms.

        Each pair of uniforms produces (cos, sin) outputs; an odd count
        discards the final sin value. No state is cached across calls.
        """
        out: list[float] = []
        for _ in range((n + 1) // 2):
            u1 = self.uniform()
            u2 = self.uniform()
            if u1 == 0.0:
                u1 = 2.0 ** -53
            r = math.sqrt(-2.0 * math.log(u1))
            out.append(r * math.cos(2.0 * math.pi * u2))
            out.append(r * math.sin(2.0 * math.pi * u2))
        return out[:n]


def derive_stream(seed: int, index: int) -> int:
    """Per-scenario stream seed: mix the base seed with a stream index."""
    rng = SplitMix64(seed)
    value = rng.next_u64()
    for _ in range(index + 1):
        value = rng.next_u64()
    return value
