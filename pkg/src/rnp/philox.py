"""Vectorized Philox4x32-10 counter-based generator.

Each 128-bit counter block is hashed independently under a 64-bit key, so any
draw is a pure function of ``(key, counter)``.  Monte Carlo paths use the path
index as part of the counter, which makes every path's random stream
independent of how paths are batched or scheduled.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
ROUNDS = 10


def _rounds(
    c0: np.ndarray, c1: np.ndarray, c2: np.ndarray, c3: np.ndarray, key: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # words are carried in uint64 so the 32x32 -> 64 bit products are exact
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for i in range(ROUNDS):
        if i:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ np.uint64(k0),
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ np.uint64(k1),
            p0 & _MASK,
        )
    return c0, c1, c2, c3


def philox4x32(counter: np.ndarray, key: tuple[int, int]) -> np.ndarray:
    """Hash counters of shape ``(..., 4)`` (uint32 words) into random uint32 words."""
    ctr = np.asarray(counter, dtype=np.uint64)
    out = _rounds(ctr[..., 0], ctr[..., 1], ctr[..., 2], ctr[..., 3], key)
    return np.stack(out, axis=-1).astype(np.uint32)


def seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def to_unit_open(words: np.ndarray) -> np.ndarray:
    """Map uint32 words to floats in the open interval (0, 1)."""
    return (words.astype(np.float64) + 0.5) * (1.0 / 4294967296.0)


def step_draws(
    seed: int, path_index: np.ndarray, first_pair: int, n_pairs: int
) -> tuple[np.ndarray, np.ndarray]:
    """Normals and uniforms for step pairs ``first_pair .. first_pair + n_pairs - 1``.

    Returns two arrays of shape ``(len(path_index), 2 * n_pairs)``: standard
    normal increments (Box-Muller on words 0 and 1 of each block) and uniforms
    for the bridge-crossing test (words 2 and 3).  Step ``k`` of a path lives
    in counter block ``(k // 2, path_lo, path_hi, 0)``.
    """
    paths = np.asarray(path_index, dtype=np.uint64)
    n = paths.shape[0]
    shape = (n, n_pairs)
    c0 = np.broadcast_to(np.arange(first_pair, first_pair + n_pairs, dtype=np.uint64), shape)
    c1 = np.broadcast_to((paths & _MASK)[:, None], shape)
    c2 = np.broadcast_to((paths >> _SHIFT)[:, None], shape)
    c3 = np.zeros(shape, dtype=np.uint64)
    w0, w1, w2, w3 = _rounds(c0, c1, c2, c3, seed_key(seed))
    radius = np.sqrt(-2.0 * np.log(to_unit_open(w0)))
    angle = (2.0 * np.pi) * to_unit_open(w1)
    normals = np.empty((n, 2 * n_pairs))
    normals[:, 0::2] = radius * np.cos(angle)
    normals[:, 1::2] = radius * np.sin(angle)
    uniforms = np.empty((n, 2 * n_pairs))
    uniforms[:, 0::2] = to_unit_open(w2)
    uniforms[:, 1::2] = to_unit_open(w3)
    return normals, uniforms
