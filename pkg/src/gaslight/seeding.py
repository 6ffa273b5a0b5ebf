"""Counter-based random streams.

Trial ``i`` of a command tagged ``tag`` under base seed ``s`` owns the 64-bit
seed ``mix(s, tag, i)``::

    mix(s, tag, i) = sm(sm(sm(s) ^ H(tag)) ^ i)

where ``sm`` is the splitmix64 finalizer and ``H`` is the 8-byte BLAKE2b
digest (``digest_size=8``, read little endian) of the UTF-8 tag. Draw ``j`` of that
trial is ``sm(seed + (j + 1) * 0x9E3779B97F4A7C15) >> 11`` scaled by 2**-53.
Draws are pure functions of (seed, tag, trial, slot), so results never depend
on batching, chunking or thread count.
"""

from __future__ import annotations

import hashlib

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def splitmix64(x):
    """Vectorized splitmix64 output function (uint64 in, uint64 out)."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def mix(base_seed: int, tag: str, index) -> np.ndarray:
    """Seed for trial ``index`` (scalar or array) of command ``tag``."""
    h = splitmix64(np.uint64(int(base_seed) & _MASK))
    h = splitmix64(h ^ np.uint64(tag_hash(tag)))
    return splitmix64(h ^ np.asarray(index, dtype=np.uint64))


def trial_seeds(base_seed: int, tag: str, n: int, start: int = 0) -> np.ndarray:
    return mix(base_seed, tag, np.arange(start, start + n, dtype=np.uint64))


def uniforms(seeds, n_draws: int) -> np.ndarray:
    """Uniforms in [0, 1) of shape ``(len(seeds), n_draws)``."""
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    slots = (np.arange(1, n_draws + 1, dtype=np.uint64) * GOLDEN)[None, :]
    with np.errstate(over="ignore"):
        z = splitmix64(seeds[:, None] + slots)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
