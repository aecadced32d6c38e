"""Deterministic, platform-independent random streams.

Everything random in this package (dataset generation, parameter init,
batch schedules) flows through SplitMix64 so that a seed reproduces the
same bytes on any machine. Constants are the published SplitMix64 ones:

    state += 0x9E3779B97F4A7C15            (golden-ratio increment)
    z = state; z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9
    z = (z ^ z >> 27) * 0x94D049BB133111EB
    return z ^ z >> 31

Uniform doubles take the top 53 bits; gaussians use the Irwin-Hall sum of
12 uniforms (no transcendentals, so results are bit-identical across
libm implementations).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# FNV-1a 64-bit, used to fold string labels into stream seeds.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix(state: int) -> tuple[int, int]:
    state = (state + _GAMMA) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return state, z ^ (z >> 31)


def fold(seed: int, *labels: int | str) -> int:
    """Derive a child seed from a parent seed and a label path."""
    h = seed & _MASK
    for label in labels:
        if isinstance(label, str):
            f = _FNV_OFFSET
            for b in label.encode("utf-8"):
                f = ((f ^ b) * _FNV_PRIME) & _MASK
            label = f
        # one mixing round per label so (0, "a") and ("a", 0) differ
        h, out = _splitmix((h ^ (label & _MASK)) & _MASK)
        h = out
    return h


class Stream:
    """A sequential SplitMix64 stream of uniforms and gaussians."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state, out = _splitmix(self._state)
        return out

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def uniform_array(self, shape: tuple[int, ...], low: float, high: float) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = self.uniforms(n).reshape(shape)
        return low + (high - low) * u

    def gaussian(self) -> float:
        """Approximately N(0,1) via Irwin-Hall (sum of 12 uniforms - 6)."""
        return sum(self.uniform() for _ in range(12)) - 6.0

    def gaussian_array(self, shape: tuple[int, ...], std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        g = np.array([self.gaussian() for _ in range(n)], dtype=np.float64)
        return (std * g).reshape(shape)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias (rejection)."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffled(self, items: list) -> list:
        """Fisher-Yates shuffle (copy); deterministic given stream state."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out
