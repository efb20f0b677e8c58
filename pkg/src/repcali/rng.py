"""Deterministic pseudo-random numbers based on splitmix64.

Every source of randomness in the package (parameter init, dropout masks,
dataset generation, batch shuffling, projection init) draws from one of
these generators, seeded directly or indirectly from an experiment seed.
The generator is counter-based, so bulk draws vectorize with numpy while
staying bit-identical to the scalar recurrence on every platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive(seed: int, label: str) -> int:
    """Derive an independent child seed from (seed, label).

    Uses an FNV-1a hash of the label so the same label always yields the
    same stream, independent of Python's randomized str hashing.
    """
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return _mix((seed ^ h) & _MASK64)


class SplitMix64:
    """Counter-based splitmix64 stream over a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        start = self.counter
        self.counter += n
        idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        z = (np.uint64(self.seed) + idx * np.uint64(_GOLDEN)).astype(np.uint64)
        return _mix_array(z)

    def next_u64(self) -> int:
        self.counter += 1
        return _mix((self.seed + self.counter * _GOLDEN) & _MASK64)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform floats in [low, high), float64."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian floats via Box-Muller, float64."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u1 = np.maximum(u1, 2.0 ** -53)  # keep log finite
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (mean + std * z).reshape(shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        """Integers in [low, high), int64, by rejection-free modulo of a
        64-bit draw (bias < 2**-50 for the ranges used here)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        n = int(np.prod(shape)) if shape else 1
        span = np.uint64(high - low)
        vals = (self._raw(n) % span).astype(np.int64) + low
        return vals.reshape(shape)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]

    def fork(self, label: str) -> "SplitMix64":
        return SplitMix64(derive(self.seed, label))
