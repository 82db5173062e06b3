"""Independent reference implementations used as test oracles.

Everything here is written directly from the mathematical definitions with
plain loops, sharing no code with the package.
"""

from __future__ import annotations

import math

import numpy as np


# -- finite differences ----------------------------------------------------


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


# -- convolution and pixel shuffle -------------------------------------------


def conv2d_loops(x, w, b, stride, pad):
    N, C, H, W = x.shape
    O, _, K, _ = w.shape
    xp = np.zeros((N, C, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - K) // stride + 1
    Wo = (W + 2 * pad - K) // stride + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride:i * stride + K, j * stride:j * stride + K]
                    out[n, o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


def depth_to_space_loops(x, s):
    N, C, H, W = x.shape
    c = C // (s * s)
    out = np.zeros((N, c, H * s, W * s))
    for n in range(N):
        for ch in range(c):
            for y in range(H):
                for xx in range(W):
                    for dy in range(s):
                        for dx in range(s):
                            out[n, ch, y * s + dy, xx * s + dx] = x[n, ch * s * s + dy * s + dx, y, xx]
    return out


# -- quantizer ---------------------------------------------------------------


def quantize_oracle(p: float, L: int) -> int:
    """Scan the bins: return l-1 for the l with (l-1)/L <= p < l/L."""
    for level in range(1, L + 1):
        if (level - 1) / L <= p < level / L:
            return level - 1
    raise ValueError(p)


def mask_oracle(q: int, n: int, L: int) -> list[int]:
    """Channel k (1-based) kept iff k <= (n/L) * q."""
    return [1 if k <= (n // L) * q else 0 for k in range(1, n + 1)]


def mask_grad_oracle(p: float, k: int, n: int, L: int) -> float:
    c = math.ceil(k * L / n)
    return float(L) if (L * p - 1 <= c < L * p + 2) else 0.0


# -- coding schedule and contexts --------------------------------------------


def schedule_oracle(mask):
    n, h, w = mask.shape
    return [(k, i, j) for k in range(n) for i in range(h) for j in range(w) if mask[k, i, j]]


def context_oracle(codes, mask, k, i, j):
    """(4,5,5) cuboid; depth d covers map k-3+d, window rows i-2..i+2."""
    n, h, w = codes.shape
    order = {pos: t for t, pos in enumerate(schedule_oracle(mask))}
    here = order[(k, i, j)]
    cub = np.zeros((4, 5, 5), dtype=np.uint8)
    for d in range(4):
        kk = k - 3 + d
        for di in range(5):
            for dj in range(5):
                ii, jj = i - 2 + di, j - 2 + dj
                if not (0 <= kk < n and 0 <= ii < h and 0 <= jj < w):
                    continue
                pos = (kk, ii, jj)
                if pos in order and order[pos] < here:
                    cub[d, di, dj] = 1 + int(codes[pos])
    return cub


# -- metrics -------------------------------------------------------------------


def ssim_constant(a: float, b: float) -> float:
    c1 = (0.01 * 255) ** 2
    return (2 * a * b + c1) / (a * a + b * b + c1)
