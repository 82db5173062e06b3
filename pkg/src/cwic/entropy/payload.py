"""Entropy-coded and raw payloads for codes and importance bitplanes."""

from __future__ import annotations

import numpy as np

from cwic._backend import kernels
from cwic.entropy.bitplanes import binarize_importance, debinarize_importance, plane_count
from cwic.errors import BitCountMismatch


def encode_codes(codes, mask, model) -> bytes:
    """Context-coded bits of ``codes`` at every position where ``mask`` is 1."""
    return kernels.encode_maps(codes, mask, model.codes)


def decode_codes(data: bytes, mask, model, trace=None) -> np.ndarray:
    codes, used = kernels.decode_maps(data, mask, model.codes, trace)
    if used != len(data):
        raise BitCountMismatch(f"code payload is {len(data)} bytes but decoding consumed {used}")
    return codes


def encode_importance(imp_q, model, L: int) -> bytes:
    """Bitplanes of the quantized importance map, plane 0 first, no skipping."""
    planes = binarize_importance(imp_q, L)
    return kernels.encode_maps(planes, np.ones_like(planes), model.importance)


def decode_importance(data: bytes, model, h: int, w: int, L: int, trace=None) -> np.ndarray:
    nb = plane_count(L)
    ones = np.ones((nb, h, w), dtype=np.uint8)
    planes, used = kernels.decode_maps(data, ones, model.importance, trace)
    if used != len(data):
        raise BitCountMismatch(f"importance payload is {len(data)} bytes but decoding consumed {used}")
    imp_q = debinarize_importance(planes)
    if imp_q.size and imp_q.max() >= L:
        raise BitCountMismatch(f"decoded importance level {imp_q.max()} >= L={L}")
    return imp_q


# --------------------------------------------------------------------------
# raw fallbacks


def pack_raw(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8).ravel()).tobytes()


def unpack_raw(data: bytes, count: int) -> np.ndarray:
    expected = (count + 7) // 8
    if len(data) != expected:
        raise BitCountMismatch(f"raw payload is {len(data)} bytes, expected {expected} for {count} bits")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if bits[count:].any():
        raise BitCountMismatch("nonzero padding bits in raw payload")
    return bits[:count]


def raw_codes(codes, mask) -> bytes:
    mask = np.asarray(mask).astype(bool)
    return pack_raw(np.asarray(codes)[mask])


def unraw_codes(data: bytes, mask) -> np.ndarray:
    mask = np.asarray(mask).astype(bool)
    codes = np.zeros(mask.shape, dtype=np.uint8)
    codes[mask] = unpack_raw(data, int(mask.sum()))
    return codes


def raw_importance(imp_q, L: int) -> bytes:
    return pack_raw(binarize_importance(imp_q, L))


def unraw_importance(data: bytes, h: int, w: int, L: int) -> np.ndarray:
    nb = plane_count(L)
    planes = unpack_raw(data, nb * h * w).reshape(nb, h, w)
    imp_q = debinarize_importance(planes)
    if imp_q.size and imp_q.max() >= L:
        raise BitCountMismatch(f"raw importance level {imp_q.max()} >= L={L}")
    return imp_q
