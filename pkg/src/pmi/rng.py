"""Seeded xoshiro256** random number generator.

Every stochastic choice in the package (weight init, data synthesis, batch
sampling) draws from an instance of :class:`Rng`, so a fixed seed plus a
fixed configuration reproduces runs bit for bit.  Independent streams are
derived from (seed, stream) pairs, which keeps per-video data generation
and per-seed training runs decoupled.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator with splitmix64 seeding."""

    def __init__(self, seed: int, stream: int = 0):
        sm = (seed ^ (stream * _GOLDEN)) & _MASK64
        state = []
        for _ in range(4):
            sm, word = _splitmix64(sm)
            state.append(word)
        # xoshiro must not start from the all-zero state
        if not any(state):
            state[0] = _GOLDEN
        self._s = state
        self._seed = seed
        self._stream = stream

    def spawn(self, stream: int) -> "Rng":
        """Deterministic child generator tied to this seed."""
        return Rng(self._seed, stream=self._stream * 0x10001 + stream + 1)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None) -> np.ndarray | float:
        if size is None:
            return lo + (hi - lo) * self.random()
        n = int(np.prod(size))
        vals = [lo + (hi - lo) * self.random() for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray | float:
        if size is None:
            return loc + scale * self._normal_pairs(1)[0]
        n = int(np.prod(size))
        vals = self._normal_pairs(n)
        return (loc + scale * np.array(vals[:n], dtype=np.float64)).reshape(size)

    def _normal_pairs(self, n: int) -> list[float]:
        # Box-Muller; an odd request draws one extra uniform pair and
        # discards the second normal so call counts stay deterministic.
        out = []
        for _ in range((n + 1) // 2):
            u1 = self.random()
            while u1 <= 0.0:
                u1 = self.random()
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            out.append(r * math.cos(2.0 * math.pi * u2))
            out.append(r * math.sin(2.0 * math.pi * u2))
        return out

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi) by rejection sampling."""
        span = hi - lo
        if span <= 0:
            raise ValueError(f"empty integer range [{lo}, {hi})")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % span)
        while True:
            x = self.next_u64()
            if x < limit:
                return lo + x % span

    def choice(self, n: int, k: int, replace: bool = True) -> list[int]:
        if replace:
            return [self.randint(0, n) for _ in range(k)]
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        pool = list(range(n))
        self.shuffle(pool)
        return pool[:k]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]
