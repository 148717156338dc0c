"""Deterministic counter-based random number generation.

All stochastic code in this package draws from :class:`Rng`, a SplitMix64
counter generator. Unlike stateful generators, output ``i`` of a stream is a
pure function of ``(key, i)``, so any draw can be reproduced from the seed
and the documented constants below, in any implementation language:

    output(i) = mix64((key + (i + 1) * GAMMA) mod 2**64)

with the finalizer

    mix64(z): z ^= z >> 30; z *= M1; z ^= z >> 27; z *= M2; z ^= z >> 31

and constants

    GAMMA = 0x9E3779B97F4A7C15
    M1    = 0xBF58476D1CE4E5B9
    M2    = 0x94D049BB133111EB

Uniform doubles take the top 53 bits: ``(output >> 11) * 2**-53``, giving
values in ``[0, 1)``. Normal deviates use the Box-Muller transform and
always consume exactly two uniforms (no spare is cached). Child streams are
keyed by label:

    child_key = mix64(parent_key ^ mix64(fnv1a64(label_utf8)))

so ``(seed, label path)`` fully determines every stream in a run.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

TWO_NEG_53 = 2.0 ** -53
_TWO_PI = 2.0 * math.pi


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * M1) & _MASK64
    z = ((z ^ (z >> 27)) * M2) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    """FNV-1a hash of a byte string, used to key child streams."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class Rng:
    """Counter-based SplitMix64 stream.

    Parameters
    ----------
    seed : int
        Stream key. Any Python int; reduced mod 2**64.
    counter : int, optional
        Number of 64-bit outputs already consumed. Exposed so compiled
        kernels can continue a stream and hand the counter back.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.key = seed & _MASK64
        self.counter = counter

    def __repr__(self) -> str:
        return f"Rng(key=0x{self.key:016x}, counter={self.counter})"

    def child(self, label: str) -> "Rng":
        """Derive an independent stream from a string label.

        The same (parent, label) pair always yields the same child, and
        distinct labels yield (with overwhelming probability) unrelated keys.
        """
        h = mix64(fnv1a64(label.encode("utf-8")))
        return Rng(mix64(self.key ^ h))

    def u64(self) -> int:
        """Next raw 64-bit output."""
        self.counter += 1
        return mix64((self.key + self.counter * GAMMA) & _MASK64)

    def uniform(self) -> float:
        """Next double in [0, 1)."""
        return (self.u64() >> 11) * TWO_NEG_53

    def uniforms(self, n: int) -> np.ndarray:
        """Vector of ``n`` uniforms, identical to ``n`` scalar draws."""
        if n < 0:
            raise ValueError("n must be >= 0")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = (np.uint64(self.key) + idx * np.uint64(GAMMA))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(M2)
        z = z ^ (z >> np.uint64(31))
        return (z >> np.uint64(11)) * TWO_NEG_53

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes exactly two uniforms."""
        u1 = self.uniform()
        u2 = self.uniform()
        # log(1 - u1) is safe: u1 < 1 always holds for 53-bit uniforms
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(_TWO_PI * u2)

    def normals(self, n: int) -> np.ndarray:
        """Vector of ``n`` normals, identical to ``n`` scalar draws."""
        u = self.uniforms(2 * n)
        u1 = u[0::2]
        u2 = u[1::2]
        # same expression as the scalar path so the streams match bit for bit
        return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(_TWO_PI * u2)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on the top 53 bits."""
        if n <= 0:
            raise ValueError("n must be positive")
        # rejection keeps the draw exactly uniform
        lim = (1 << 53) - ((1 << 53) % n)
        while True:
            v = self.u64() >> 11
            if v < lim:
                return v % n
