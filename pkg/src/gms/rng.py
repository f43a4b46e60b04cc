"""Platform-independent pseudo random numbers (splitmix64-seeded xoshiro256**)."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, TypeVar

import numpy as np

from .errors import UsageError

if TYPE_CHECKING:
    from collections.abc import MutableSequence, Sequence

T = TypeVar("T")

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state.

    Args:
        state: The current 64-bit state.

    Returns:
        The new state and the generated output.
    """
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """A xoshiro256** generator.

    The four state words are filled from splitmix64 outputs of the seed, so
    any 64-bit integer (including 0) is a valid seed. Bulk array randomness is
    delegated to :meth:`numpy`, a numpy ``PCG64`` generator seeded from this
    stream; both algorithms are fixed and produce the same values on every platform.
    """

    __slots__ = ("_s",)

    def __init__(self, seed: int) -> None:
        """Seed the generator with a 64-bit integer."""
        state = seed & MASK64
        words = []
        for _ in range(4):
            state, out = splitmix64(state)
            words.append(out)
        self._s = words

    @classmethod
    def derive(cls, seed: int, *path: int | str) -> Rng:
        """Create an independent generator for a sub-task, e.g. ``Rng.derive(seed, "sample", index)``."""
        state = seed & MASK64
        for part in path:
            value = int.from_bytes(part.encode(), "little") if isinstance(part, str) else int(part)
            _, mixed = splitmix64(state ^ (value & MASK64))
            state = mixed
        return cls(state)

    def next_u64(self) -> int:
        """Return the next 64-bit output."""
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Return a float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, low: float, high: float) -> float:
        """Return a float in [low, high)."""
        return low + (high - low) * self.uniform()

    def integers(self, low: int, high: int) -> int:
        """Return an integer in [low, high) without modulo bias."""
        span = high - low
        if span <= 0:
            msg = f"integers() needs low < high, got [{low}, {high})."
            raise UsageError(msg)
        limit = MASK64 - (MASK64 + 1) % span
        while True:
            value = self.next_u64()
            if value <= limit:
                return low + value % span

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Return a normally distributed float (Box-Muller)."""
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def bernoulli(self, p: float) -> bool:
        """Return True with probability ``p``."""
        return self.uniform() < p

    def shuffle(self, items: MutableSequence[T]) -> None:
        """Shuffle a sequence in place (Fisher-Yates)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items: Sequence[T]) -> T:
        """Return a uniformly chosen element."""
        if not items:
            msg = "choice() from an empty sequence."
            raise UsageError(msg)
        return items[self.integers(0, len(items))]

    def numpy(self) -> np.random.Generator:
        """Return a numpy generator seeded from the next output of this stream."""
        return np.random.Generator(np.random.PCG64(self.next_u64()))
