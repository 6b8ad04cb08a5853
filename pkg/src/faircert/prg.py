"""Deterministic counter-mode pseudorandom generator.

Block i of the stream is SHA3-256(key || i as 8-byte little-endian), so a
(key, index) pair always yields the same draws regardless of platform,
process, or call order. All simulation randomness in the package (planted
data, label flips, augmentation noise) flows through this module.
"""

from __future__ import annotations

import hashlib
import math
import struct
from fractions import Fraction

_U64 = 1 << 64
_TWO_PI = 2.0 * math.pi


def derive_key(master: bytes, label: str) -> bytes:
    """Derive an independent 8-byte subkey for a named subsystem."""
    return hashlib.sha3_256(master + b"/" + label.encode("ascii")).digest()[:8]


def hash_u64(*parts: bytes) -> int:
    """One-shot 64-bit draw from the hash of the given byte strings."""
    return int.from_bytes(hashlib.sha3_256(b"".join(parts)).digest()[:8], "little")


class CounterPrg:
    """Stream of uniform draws expanded from a key by a counter."""

    def __init__(self, key: bytes):
        self._key = bytes(key)
        self._counter = 0
        self._buf = b""
        self._gauss_spare: float | None = None

    def _refill(self) -> None:
        block = hashlib.sha3_256(
            self._key + struct.pack("<Q", self._counter)
        ).digest()
        self._counter += 1
        self._buf += block

    def u64(self) -> int:
        while len(self._buf) < 8:
            self._refill()
        value = int.from_bytes(self._buf[:8], "little")
        self._buf = self._buf[8:]
        return value

    def uniform(self) -> float:
        """Float in [0, 1)."""
        return self.u64() / _U64

    def below(self, prob: Fraction) -> bool:
        """Exact Bernoulli(prob) using integer comparison, no float rounding."""
        if prob <= 0:
            self.u64()
            return False
        return self.u64() * prob.denominator < prob.numerator * _U64

    def choose_weighted(self, cumulative: list[tuple[Fraction, int]]) -> int:
        """Pick an index from exact cumulative weights (last must reach 1)."""
        u = Fraction(self.u64(), _U64)
        for bound, idx in cumulative:
            if u < bound:
                return idx
        return cumulative[-1][1]

    def int_below(self, n: int) -> int:
        """Uniform int in [0, n) by rejection, exact."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _U64 - (_U64 % n)
        while True:
            u = self.u64()
            if u < limit:
                return u % n

    def gauss(self) -> float:
        """Standard normal via Box-Muller on two 64-bit uniforms."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        u1 = (self.u64() + 1) / _U64  # (0, 1], keeps log finite
        u2 = self.u64() / _U64
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_spare = r * math.sin(_TWO_PI * u2)
        return r * math.cos(_TWO_PI * u2)
