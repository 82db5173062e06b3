"""Binary representation of the quantized importance map."""

from __future__ import annotations

import numpy as np


def plane_count(L: int) -> int:
    """Smallest n_b with 2**(n_b - 1) < L <= 2**n_b."""
    if L < 2:
        raise ValueError(f"need at least 2 importance levels, got {L}")
    return int(L - 1).bit_length()


def binarize_importance(imp_q, L: int) -> np.ndarray:
    """(h, w) levels -> (n_b, h, w) bitplanes, least significant plane first."""
    imp_q = np.asarray(imp_q, dtype=np.int64)
    nb = plane_count(L)
    if imp_q.size and (imp_q.min() < 0 or imp_q.max() >= 1 << nb):
        raise ValueError(f"importance level out of range for {nb} bitplanes")
    shifts = np.arange(nb).reshape(nb, *([1] * imp_q.ndim))
    return ((imp_q[None] >> shifts) & 1).astype(np.uint8)


def debinarize_importance(planes) -> np.ndarray:
    planes = np.asarray(planes, dtype=np.int64)
    weights = (1 << np.arange(planes.shape[0])).reshape(-1, *([1] * (planes.ndim - 1)))
    return (planes * weights).sum(axis=0)
