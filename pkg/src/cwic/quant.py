"""Binarizer, importance quantizer, importance mask and code trimming.

Channel indices ``k`` are 1-based in the formulas below; arrays are stored
0-based, so channel ``k`` lives at index ``k - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cwic import tensor as T
from cwic.tensor import Tensor


@dataclass
class CodeBundle:
    codes: np.ndarray   # (n, h, w) uint8, already trimmed
    imp_q: np.ndarray   # (h, w) int, 0..L-1
    mask: np.ndarray    # (n, h, w) uint8
    n: int
    L: int

    @property
    def bit_count(self) -> int:
        return int(self.mask.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CodeBundle):
            return NotImplemented
        return (self.n == other.n and self.L == other.L
                and np.array_equal(self.codes, other.codes)
                and np.array_equal(self.imp_q, other.imp_q)
                and np.array_equal(self.mask, other.mask))


# --------------------------------------------------------------------------
# binarizer


def binarize_values(e: np.ndarray) -> np.ndarray:
    """1 where e > 0.5, else 0 (0.5 itself maps to 0)."""
    return (np.asarray(e) > 0.5).astype(np.uint8)


def binarize_grad(e: np.ndarray) -> np.ndarray:
    """Slope of the piecewise-linear proxy: 1 on [0, 1], 0 outside."""
    e = np.asarray(e)
    return ((e >= 0.0) & (e <= 1.0)).astype(np.float64)


def binarize(e: Tensor) -> Tensor:
    """Hard threshold forward, proxy gradient backward."""
    return T.custom_unit(lambda a: binarize_values(a).astype(np.float64), binarize_grad, e)


# --------------------------------------------------------------------------
# importance map


def quantize_importance(p, L: int):
    """Level index l-1 such that (l-1)/L <= p < l/L.

    Accepts a scalar or an array; p must lie strictly inside (0, 1).
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        bad = arr[~((arr > 0.0) & (arr < 1.0))].ravel()[0]
        raise ValueError(f"importance value {bad!r} outside (0, 1)")
    q = np.floor(arr * L).astype(np.int64)
    # guard against p*L rounding across a bin edge when L is not a power of 2
    q = np.where(q / L > arr, q - 1, q)
    q = np.where((q + 1) / L <= arr, q + 1, q)
    q = np.clip(q, 0, L - 1)
    return int(q) if q.ndim == 0 else q


def _open_unit(p):
    """Pull saturated sigmoid outputs (exactly 0 or 1 in float64) inside (0, 1)."""
    return np.clip(p, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))


def _check_levels(n: int, L: int) -> None:
    if L <= 0 or n % L:
        raise ValueError(f"n mod L must be 0 (n={n}, L={L})")


def build_mask(imp_q: np.ndarray, n: int, L: int) -> np.ndarray:
    """mask[k-1, i, j] = 1 iff k <= (n/L) * imp_q[i, j]."""
    _check_levels(n, L)
    imp_q = np.asarray(imp_q)
    if imp_q.size and (imp_q.min() < 0 or imp_q.max() > L - 1):
        raise ValueError(f"importance levels must lie in 0..{L - 1}")
    k = np.arange(1, n + 1).reshape(n, *([1] * imp_q.ndim))
    return (k <= (n // L) * imp_q[None]).astype(np.uint8)


def mask_backward(p, k, n: int, L: int):
    """Straight-through derivative of mask[k] w.r.t. p.

    Returns L when L*p - 1 <= ceil(k*L/n) < L*p + 2, else 0.
    """
    _check_levels(n, L)
    p = np.asarray(p, dtype=np.float64)
    k = np.asarray(k)
    c = -((-k * L) // n)  # exact integer ceil(kL/n)
    lp = L * p
    out = np.where((lp - 1.0 <= c) & (c < lp + 2.0), float(L), 0.0)
    return float(out) if out.ndim == 0 else out


def importance_mask(p: Tensor, n: int, L: int) -> Tensor:
    """Training-graph mask: (N,1,h,w) importance -> (N,n,h,w) mask.

    Forward quantizes and thresholds; backward uses the straight-through
    derivative of :func:`mask_backward`.
    """
    _check_levels(n, L)
    k = np.arange(1, n + 1).reshape(1, n, 1, 1)

    def fwd(a):
        q = quantize_importance(_open_unit(a), L)
        return (k <= (n // L) * q).astype(np.float64)

    def bwd(a):
        return mask_backward(a, k, n, L)

    return T.custom_unit(fwd, bwd, T.repeat_channels(p, n))


def trim(codes, mask):
    """Elementwise product.  Tensors stay in the graph; arrays stay arrays."""
    if isinstance(codes, Tensor):
        return T.mul(codes, mask)
    codes = np.asarray(codes)
    mask = np.asarray(mask)
    if codes.shape != mask.shape:
        raise ValueError(f"trim: shape mismatch {codes.shape} vs {mask.shape}")
    return (codes * mask).astype(np.uint8)


def make_bundle(e: np.ndarray, p: np.ndarray, n: int, L: int,
                importance_enabled: bool = True) -> CodeBundle:
    """Quantize one image's encoder output (n,h,w) and importance map (h,w)."""
    codes = binarize_values(e)
    h, w = e.shape[1:]
    if importance_enabled:
        imp_q = quantize_importance(_open_unit(p), L)
        mask = build_mask(imp_q, n, L)
    else:
        imp_q = np.zeros((h, w), dtype=np.int64)
        mask = np.ones((n, h, w), dtype=np.uint8)
    return CodeBundle(trim(codes, mask), np.asarray(imp_q, dtype=np.int64), mask, n, L)
