"""Portable deterministic random number generation.

Datasets, parameter initialization, and training-time augmentation must be
bit-reproducible across runs and platforms, so randomness is pinned to a
fixed, explicitly implemented generator instead of numpy's (whose
distribution streams may change between releases):

  * state seeding / stream derivation: splitmix64
  * core generator: xoshiro256++ (Blackman & Vigna)
  * uniform doubles: top 53 bits of a 64-bit draw, i.e. (u >> 11) * 2**-53
  * normals: Box-Muller, two uniform draws per value, cosine branch only
    (no cached spare, so each call consumes a fixed number of draws)

Integer state arithmetic is exact everywhere; float results depend only on
IEEE-754 double operations plus libm's log/cos/sqrt for normals.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (output, next_state)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def derive_seed(seed: int, *indices: int) -> int:
    """Mix a base seed with stream indices into a new 64-bit seed.

    Used to give every (split, sample) its own independent stream so
    per-sample generation can run in any order or in parallel.
    """
    state = seed & _MASK64
    for idx in indices:
        state ^= (idx & _MASK64) * 0xD1B54A32D192ED03 & _MASK64
        out, state = _splitmix64(state)
        state = out
    out, _ = _splitmix64(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class PortableRng:
    """xoshiro256++ with splitmix64 seeding. Not thread-safe; one per stream."""

    __slots__ = ("_s",)

    def __init__(self, seed: int, stream: int = 0):
        state = derive_seed(seed, stream) if stream else seed & _MASK64
        s = []
        for _ in range(4):
            out, state = _splitmix64(state)
            s.append(out)
        # xoshiro256 state must not be all-zero; splitmix64 guarantees this
        # for any seed in practice, but guard anyway.
        if not any(s):
            s[0] = _GOLDEN
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[0] + s[3]) & _MASK64, 23) + s[0]) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self) -> float:
        """Standard normal via Box-Muller (cosine branch)."""
        u1 = 1.0 - self.random()  # in (0, 1], keeps log finite
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def uniform_list(self, n: int, lo: float, hi: float) -> list[float]:
        return [self.uniform(lo, hi) for _ in range(n)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, index: int) -> "PortableRng":
        """Child generator on an independent stream."""
        return PortableRng(derive_seed(self.next_u64(), index))
