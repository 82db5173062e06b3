"""Binary arithmetic coding entry points.

Thin wrappers over the selected kernel backend.  Probabilities are the
model probability that the bit is 1; they are clamped to [1e-4, 1 - 1e-4]
and rounded to 24 bits inside the coder.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np

from cwic._backend import kernels

P_MIN = 1e-4
P_MAX = 1.0 - 1e-4


def clamp_prob(p):
    return np.clip(p, 1e-4, 1.0 - 1e-4)


def ac_encode(bits, probs) -> bytes:
    return kernels.encode_bits(bits, probs)


def ac_decode(data: bytes, probs: Union[np.ndarray, Callable[[int], float]], count: int | None = None,
              return_consumed: bool = False):
    """Decode ``count`` bits.

    ``probs`` is either an array of per-bit probabilities or a callback
    ``f(index, previous_bits) -> p`` evaluated sequentially, so adaptive
    models can condition on what was already decoded.
    """
    if callable(probs):
        if count is None:
            raise ValueError("count is required with a probability callback")
        out = np.zeros(count, dtype=np.uint8)
        if count == 0:
            return (out, 0) if return_consumed else out
        dec = kernels.RangeDecoder(data)
        for idx in range(count):
            out[idx] = dec.decode(float(probs(idx, out[:idx])))
        consumed = dec.consumed
    else:
        probs = np.asarray(probs, dtype=np.float64).ravel()
        if count is not None and count != probs.size:
            raise ValueError(f"count {count} != {probs.size} probabilities")
        out, consumed = kernels.decode_bits(data, probs)
    return (out, consumed) if return_consumed else out


def ideal_bits(bits, probs) -> float:
    """Cross-entropy of ``bits`` under the clamped model, in bits."""
    p = clamp_prob(np.asarray(probs, dtype=np.float64))
    b = np.asarray(bits).astype(bool)
    return float(-np.sum(np.log2(np.where(b, p, 1.0 - p))))
