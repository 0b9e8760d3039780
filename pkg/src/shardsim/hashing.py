"""Fixed 64-bit mixing hash used for key placement and ring positions."""
from __future__ import annotations

import numpy as np

HASH_ID = "splitmix64-chain/seed=0x5eed5a4d"
HASH_SEED = 0x5EED5A4D
MASK64 = (1 << 64) - 1
RING_SIZE = 1 << 64


def mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash64(*parts: int, seed: int = HASH_SEED) -> int:
    h = seed
    for p in parts:
        h = mix64(h ^ (p & MASK64))
    return h


def key_hash(key: int) -> int:
    return hash64(key)


def key_hashes(key_count: int) -> list[int]:
    return [hash64(k) for k in range(key_count)]


def unit_positions(hashes) -> np.ndarray:
    """Map 64-bit hashes onto [0, 1) using the top 53 bits."""
    return np.asarray([(h >> 11) / (1 << 53) for h in hashes], dtype=np.float64)


class Arc:
    """Half-open ring interval (start, start + length], lengths in [1, 2**64]."""

    __slots__ = ("start", "length")

    def __init__(self, start: int, length: int):
        if not 1 <= length <= RING_SIZE:
            raise ValueError(f"arc length {length} out of range")
        self.start = start & MASK64
        self.length = length

    @classmethod
    def between(cls, lo: int, hi: int) -> "Arc":
        """Arc (lo, hi]; lo == hi means the whole ring."""
        d = (hi - lo) & MASK64
        return cls(lo, d or RING_SIZE)

    @property
    def end(self) -> int:
        return (self.start + self.length) & MASK64

    def offset(self, pos: int) -> int:
        return ((pos - self.start - 1) & MASK64) + 1

    def __contains__(self, pos: int) -> bool:
        return self.offset(pos) <= self.length

    def halves(self) -> tuple["Arc", "Arc"]:
        if self.length < 2:
            raise ValueError("a unit arc has no halves")
        left = self.length // 2
        return Arc(self.start, left), Arc(self.start + left, self.length - left)

    def __eq__(self, other) -> bool:
        return isinstance(other, Arc) and (self.start, self.length) == (other.start, other.length)

    def __hash__(self) -> int:
        return hash((self.start, self.length))

    def __repr__(self) -> str:
        return f"Arc({self.start:#x}, {self.length:#x})"
