"""Deterministic random primitives used for anything that affects results.

Fold shuffles and augmentation draws go through an explicitly specified
splitmix64 generator rather than a library PRNG, so a (seed, input) pair
pins the output stream exactly and plans can be replayed anywhere.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    """splitmix64 finalizer: scrambles one 64-bit state word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class SplitMix64:
    """Tiny 64-bit generator with a fully specified update rule.

    Stream: state += golden gamma; output = mix(state).  Good enough for
    shuffles and augmentation draws, and trivial to reproduce in any
    language, which is the point.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform draw in [lo, hi) using the top 53 bits."""
        if not lo <= hi:
            raise ValueError(f"uniform bounds out of order: lo={lo}, hi={hi}")
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + u * (hi - lo)

    def bernoulli(self, p: float) -> bool:
        """True with probability p; always consumes exactly one draw."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {p}")
        return self.uniform() < p

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates; index j drawn as next_u64() % (i + 1)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(base: int, *parts: int | str) -> int:
    """Derive an independent child seed from a base seed and a key path.

    Strings are folded in through blake2b so the mapping is stable across
    processes (unlike hash()).  Used to hand each fold / sample / member
    its own substream.
    """
    s = base & _MASK64
    for part in parts:
        if isinstance(part, str):
            h = hashlib.blake2b(part.encode("utf-8"), digest_size=8)
            p = int.from_bytes(h.digest(), "little")
        else:
            p = int(part) & _MASK64
        s = _mix(s ^ ((p + _GOLDEN) & _MASK64))
    return s
