"""Stable, platform-independent derived randomness.

Noisy oracle components must return the same value for the same
(seed, request) no matter when or how often they are called, so they
derive their randomness from a hash of the identifying fields instead
of consuming a shared RNG stream.
"""

from __future__ import annotations

import hashlib
import math


def stable_u64(*parts: object) -> int:
    """Hash the string forms of `parts` into an unsigned 64-bit integer."""
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def stable_uniform(*parts: object) -> float:
    """Deterministic uniform draw in [0, 1) keyed by `parts`."""
    return stable_u64(*parts) / 2**64


def stable_normal(*parts: object) -> float:
    """Deterministic standard-normal draw keyed by `parts` (Box-Muller)."""
    u1 = stable_uniform(*parts, "u1")
    u2 = stable_uniform(*parts, "u2")
    u1 = max(u1, 1e-300)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
