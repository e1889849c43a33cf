"""Deterministic seeded random number generation.

The generator is a SplitMix64 stream: 64-bit state advanced by the golden-ratio
increment, output mixed with two xor-shift-multiply rounds. Uniform doubles take
the top 53 bits of one output word; normals come from Box-Muller with the spare
value cached. Every draw is a pure function of the seed and the draw index, so
results are bit-for-bit reproducible across platforms.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 random stream with uniform/normal helpers."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def spawn(self) -> "Rng":
        """Child generator with an independent, seed-derived stream."""
        return Rng(self.next_u64())

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + u * (hi - lo)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bias is negligible for n << 2^64."""
        if n <= 0:
            raise ValueError("randint: n must be positive")
        return self.next_u64() % n

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return mu + sigma * z
        # Box-Muller; u1 bounded away from 0 so log is finite.
        u1 = max(self.uniform(), 1e-300)
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def normals(self, shape, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.normal(mu, sigma)
        return out.reshape(shape)

    def uniforms(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.uniform(lo, hi)
        return out.reshape(shape)

    def truncated_normal(self, shape, std: float) -> np.ndarray:
        """Zero-mean normal resampled until within two standard deviations."""
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            while True:
                z = self.normal()
                if abs(z) <= 2.0:
                    out[i] = z * std
                    break
        return out.reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
