"""Counter-based seed derivation.

Per-tree and per-replicate seeds are pure functions of (master seed,
index), so parallel schedules cannot change results.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_PHI = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer (a strong 64-bit mixing function)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Mix a master seed with one or more stream indices."""
    state = int(master) & _MASK64
    for ix in indices:
        state = mix64(state ^ ((_PHI * (int(ix) + 1)) & _MASK64))
    return state


def rng_from(master: int, *indices: int) -> np.random.Generator:
    """A numpy Generator on the derived stream."""
    return np.random.default_rng(derive_seed(master, *indices))
