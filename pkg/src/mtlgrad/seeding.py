"""Deterministic sub-seed derivation.

All randomness in the artifact flows from one 64-bit root seed; sub-seeds are
derived with a splitmix64 expansion so results are reproducible across
platforms and process boundaries.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(seed: int, *indices: int) -> int:
    """Derive a 64-bit sub-seed from a root seed and an index path."""
    x = seed & _MASK
    for idx in indices:
        x = (x + 0x9E3779B97F4A7C15 + (idx & _MASK)) & _MASK
        x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
        x = x ^ (x >> 31)
    return x
