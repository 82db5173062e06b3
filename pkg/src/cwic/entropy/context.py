"""Coding schedule and context cuboids.

Maps are coded in order, each row-major, skipping positions whose mask is
0.  The context of a bit is the 5x5 spatial window around it over the four
maps ending at its own map, recoded as

    0  unavailable (outside, masked out, the bit itself, or not yet coded)
    1  available, bit value 0
    2  available, bit value 1

Map indices here are 0-based array indices.
"""

from __future__ import annotations

import numpy as np

DEPTH = 4
SIDE = 5
HALF = SIDE // 2
SIZE = DEPTH * SIDE * SIDE
UNAVAILABLE, ZERO, ONE = 0, 1, 2


def schedule(codes, mask) -> np.ndarray:
    """(k, i, j) of every coded position, in coding order."""
    mask = np.asarray(mask)
    if codes is not None and np.shape(codes) != mask.shape:
        raise ValueError(f"codes {np.shape(codes)} and mask {mask.shape} differ")
    return np.argwhere(mask != 0)


def _precedes(a, b) -> bool:
    return tuple(a) < tuple(b)


def extract_context(codes, mask, k: int, i: int, j: int) -> np.ndarray:
    """Context cuboid of bit (k, i, j) as a (4, 5, 5) uint8 array.

    Depth index 3 is map ``k``; index 0 is map ``k - 3``.  Computed directly
    from the complete codes, so it is the encoder-side view.
    """
    codes = np.asarray(codes)
    mask = np.asarray(mask)
    n, h, w = mask.shape
    cub = np.zeros((DEPTH, SIDE, SIDE), dtype=np.uint8)
    for d in range(DEPTH):
        kk = k - (DEPTH - 1) + d
        if kk < 0:
            continue
        for dy in range(SIDE):
            ii = i - HALF + dy
            if not 0 <= ii < h:
                continue
            for dx in range(SIDE):
                jj = j - HALF + dx
                if not 0 <= jj < w:
                    continue
                if not mask[kk, ii, jj]:
                    continue
                if not _precedes((kk, ii, jj), (k, i, j)):
                    continue
                cub[d, dy, dx] = ONE if codes[kk, ii, jj] else ZERO
    return cub


def one_hot(cuboids: np.ndarray) -> np.ndarray:
    """(B, 100) ternary symbols -> (B, 300) one-hot rows (3 slots per position)."""
    syms = np.asarray(cuboids, dtype=np.int64).reshape(-1, SIZE)
    out = np.zeros((syms.shape[0], 3 * SIZE))
    rows = np.arange(syms.shape[0])[:, None]
    out[rows, np.arange(SIZE) * 3 + syms] = 1.0
    return out


def all_contexts(codes, mask, positions=None) -> np.ndarray:
    """Encoder-side contexts, (N, 100) uint8.

    Vectorised equivalent of calling :func:`extract_context` for every
    scheduled bit, or for each (k, i, j) row of ``positions``.
    """
    codes = np.asarray(codes, dtype=np.uint8)
    mask = np.asarray(mask, dtype=np.uint8)
    n, h, w = mask.shape
    pos = schedule(codes, mask) if positions is None else np.asarray(positions).reshape(-1, 3)
    state = np.where(mask != 0, codes + 1, 0).astype(np.uint8)
    padded = np.zeros((n + DEPTH - 1, h + 2 * HALF, w + 2 * HALF), dtype=np.uint8)
    padded[DEPTH - 1:, HALF:HALF + h, HALF:HALF + w] = state
    out = np.zeros((len(pos), DEPTH, SIDE, SIDE), dtype=np.uint8)
    # window offsets relative to the current bit, in cuboid order
    dk, dy, dx = np.meshgrid(np.arange(DEPTH) - (DEPTH - 1), np.arange(SIDE) - HALF,
                             np.arange(SIDE) - HALF, indexing="ij")
    k, i, j = (pos[:, 0, None, None, None], pos[:, 1, None, None, None], pos[:, 2, None, None, None])
    vals = padded[k + dk + DEPTH - 1, i + dy + HALF, j + dx + HALF]
    # keep only positions earlier in the schedule
    later = (dk > 0) | ((dk == 0) & ((dy > 0) | ((dy == 0) & (dx >= 0))))
    out[:] = np.where(later[None], 0, vals)
    return out.reshape(len(pos), SIZE)
