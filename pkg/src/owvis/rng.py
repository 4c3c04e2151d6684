"""Seeded splitmix64 generator used for every random draw in the package.

splitmix64 is counter based: the k-th output for state ``s`` is
``mix(s + k * GAMMA)``, where ``mix`` is the xor-shift-multiply finalizer
from Steele, Lea and Flood (2014). That makes vectorized draws trivial and
the stream identical on every platform.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def u64(self, n: int) -> np.ndarray:
        ks = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + ks * np.uint64(GAMMA)
            out = _mix(z)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform floats in [0, 1) with 53 random bits."""
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape) if shape != () else u[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform((m,))  # (0, 1]
        u2 = self.uniform((m,))
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return z.reshape(shape) if shape != () else z[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high)."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.uniform(shape)
        return (np.floor(u * (high - low)).astype(np.int64) + low) if shape != () else int(u * (high - low)) + low

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.u64(n), kind="stable")

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]

    def spawn(self, key: int) -> "SplitMix64":
        """Independent child stream; ``key`` distinguishes siblings."""
        return SplitMix64(self.next_u64() ^ ((int(key) * GAMMA) & MASK64))
