"""Deterministic, platform-independent random number generation.

xoshiro256** with SplitMix64 seeding. Every stochastic choice in the
package (weight init, splits, mini-batch sampling, synthetic data) goes
through this generator so that a 64-bit seed fully determines all outputs.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def _splitmix64(z: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (new_state, output)."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    out = z
    out = ((out ^ (out >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    out = ((out ^ (out >> 27)) * 0x94D049BB133111EB) & _MASK
    return z, out ^ (out >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


class Rng:
    """xoshiro256** stream seeded from a 64-bit integer via SplitMix64."""

    def __init__(self, seed: int):
        z = seed & _MASK
        s = []
        for _ in range(4):
            z, w = _splitmix64(z)
            s.append(w)
        if not any(s):  # all-zero state is the one invalid xoshiro state
            s[0] = 1
        self._s = s

    @staticmethod
    def derive(seed: int, label: str) -> "Rng":
        """Independent child stream keyed by a text label."""
        return Rng((seed ^ _fnv1a64(label)) & _MASK)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def _raw(self, n: int) -> np.ndarray:
        out = [0] * n
        s0, s1, s2, s3 = self._s
        for i in range(n):
            out[i] = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
            t = (s1 << 17) & _MASK
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return np.array(out, dtype=np.uint64)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1)."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def gaussian(self, n: int, std: float = 1.0, mean: float = 0.0) -> np.ndarray:
        """n i.i.d. Gaussian doubles via Box-Muller."""
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1], keeps log finite
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return mean + std * z

    def randint_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) without modulo bias."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (_MASK + 1) - ((_MASK + 1) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), partial Fisher-Yates order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} from {n}")
        pool = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self.randint_below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()
