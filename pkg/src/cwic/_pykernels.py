"""Pure-Python kernels: range coder and context-model map coding.

This module and the compiled ``_ckernels`` extension implement the same
functions with bit-identical output.  Probabilities are rounded to 24-bit
integers before coding, and the context predictor accumulates in a fixed
sequential order, so a stream written by one backend decodes with the other.
"""

from __future__ import annotations

import math

import numpy as np

from cwic.errors import TruncatedStream

PROB_BITS = 24
PROB_ONE = 1 << PROB_BITS
P_MIN = 1e-4
P_MAX = 1.0 - 1e-4
TOP = 1 << 24
MASK32 = 0xFFFFFFFF

CUBOID_DEPTH = 4
CUBOID_SIDE = 5
CUBOID_SIZE = CUBOID_DEPTH * CUBOID_SIDE * CUBOID_SIDE
FREQ_KEYS = 3 ** 5

KIND_NET = 0
KIND_FREQ = 1


def prob_to_int(p: float) -> int:
    if p < P_MIN:
        p = P_MIN
    elif p > P_MAX:
        p = P_MAX
    q = int(math.floor(p * PROB_ONE + 0.5))
    return min(max(q, 1), PROB_ONE - 1)


class RangeEncoder:
    """32-bit binary range coder; carries propagate through a pending byte run."""

    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self.count = 0

    def _shift_low(self):
        low = self.low
        if (low & MASK32) < 0xFF000000 or (low >> 32):
            carry = low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, bit: int, p1: float) -> None:
        """Code ``bit`` where ``p1`` is the model probability of a 1."""
        bound = (self.range * prob_to_int(p1)) >> PROB_BITS
        if bit:
            self.range = bound
        else:
            self.low += bound
            self.range -= bound
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self._shift_low()
        self.count += 1

    def finish(self) -> bytes:
        if not self.count:
            return b""
        for _ in range(5):
            self._shift_low()
        # the first byte of the stream is always zero
        return bytes(self.out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise TruncatedStream(f"range decoder needs byte {self.pos} of a {len(self.data)}-byte stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    @property
    def consumed(self) -> int:
        return self.pos

    def decode(self, p1: float) -> int:
        bound = (self.range * prob_to_int(p1)) >> PROB_BITS
        if self.code < bound:
            self.range = bound
            bit = 1
        else:
            self.code -= bound
            self.range -= bound
            bit = 0
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self.code = ((self.code << 8) | self._next()) & MASK32
        return bit


def encode_bits(bits, probs) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if bits.shape != probs.shape:
        raise ValueError(f"{bits.size} bits but {probs.size} probabilities")
    enc = RangeEncoder()
    for b, p in zip(bits.tolist(), probs.tolist()):
        enc.encode(b, p)
    return enc.finish()


def decode_bits(data: bytes, probs):
    """Decode ``len(probs)`` bits; returns (bits, bytes consumed)."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    out = np.zeros(probs.size, dtype=np.uint8)
    if not probs.size:
        return out, 0
    dec = RangeDecoder(data)
    for idx, p in enumerate(probs.tolist()):
        out[idx] = dec.decode(p)
    return out, dec.consumed


# --------------------------------------------------------------------------
# contexts


def cuboid_from_state(state: np.ndarray, k: int, i: int, j: int, out=None) -> np.ndarray:
    """5x5x4 window of the ternary availability state ending at map ``k``.

    ``state`` holds 0 for unavailable positions and bit+1 for coded ones.
    Layout of the result is (depth, row, col) with depth 3 = map ``k``.
    """
    n, h, w = state.shape
    cub = np.zeros((CUBOID_DEPTH, CUBOID_SIDE, CUBOID_SIDE), dtype=np.uint8) if out is None else out
    if out is not None:
        cub.fill(0)
    k0 = max(k - 3, 0)
    i0, i1 = max(i - 2, 0), min(i + 3, h)
    j0, j1 = max(j - 2, 0), min(j + 3, w)
    cub[k0 - k + 3:, i0 - i + 2:i1 - i + 2, j0 - j + 2:j1 - j + 2] = state[k0:k + 1, i0:i1, j0:j1]
    return cub


def freq_key(state: np.ndarray, k: int, i: int, j: int) -> int:
    """Ternary key of left, up-left, up, up-right and the previous map."""
    n, h, w = state.shape
    key = 0
    if j > 0:
        key += int(state[k, i, j - 1])
    if i > 0:
        if j > 0:
            key += 3 * int(state[k, i - 1, j - 1])
        key += 9 * int(state[k, i - 1, j])
        if j + 1 < w:
            key += 27 * int(state[k, i - 1, j + 1])
    if k > 0:
        key += 81 * int(state[k - 1, i, j])
    return key


def net_prob(model, syms: np.ndarray) -> float:
    """Predictor output for one flattened cuboid (100 ternary symbols)."""
    rows = model.w1[np.arange(CUBOID_SIZE) * 3 + syms]
    h1 = np.cumsum(np.vstack([model.b1[None], rows]), axis=0)[-1]
    h1 = np.maximum(h1, 0.0)
    h2 = np.cumsum(np.vstack([model.b2[None], h1[:, None] * model.w2]), axis=0)[-1]
    h2 = np.maximum(h2, 0.0)
    z = np.cumsum(np.concatenate([[model.b3], h2 * model.w3]))[-1]
    return _sigmoid(float(z))


def net_probs_batch(model, syms: np.ndarray) -> np.ndarray:
    """Vectorised :func:`net_prob` with the same accumulation order."""
    syms = np.asarray(syms).reshape(-1, CUBOID_SIZE)
    B = syms.shape[0]
    out = np.empty(B)
    base = np.arange(CUBOID_SIZE) * 3
    for s in range(0, B, 4096):
        chunk = syms[s:s + 4096].astype(np.int64) + base
        acc = np.repeat(model.b1[None], chunk.shape[0], axis=0)
        for pos in range(CUBOID_SIZE):
            acc += model.w1[chunk[:, pos]]
        h1 = np.maximum(acc, 0.0)
        acc2 = np.repeat(model.b2[None], chunk.shape[0], axis=0)
        for i in range(h1.shape[1]):
            acc2 += h1[:, i:i + 1] * model.w2[i]
        h2 = np.maximum(acc2, 0.0)
        z = np.full(chunk.shape[0], model.b3)
        for i in range(h2.shape[1]):
            z += h2[:, i] * model.w3[i]
        out[s:s + chunk.shape[0]] = [_sigmoid(v) for v in z.tolist()]
    return out


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _freq_prob(counts, key) -> float:
    zeros = int(counts[key, 0])
    ones = int(counts[key, 1])
    return (ones + 1.0) / (zeros + ones + 2.0)


def _positions(mask: np.ndarray):
    """Coding schedule: maps in order, row-major, skipping mask == 0."""
    return np.argwhere(mask)


def encode_maps(codes, mask, model) -> bytes:
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    if codes.shape != mask.shape or codes.ndim != 3:
        raise ValueError(f"codes {codes.shape} and mask {mask.shape} must be equal 3-d shapes")
    pos = _positions(mask)
    if not len(pos):
        return b""
    state = np.where(mask.astype(bool), codes + 1, 0).astype(np.uint8)
    enc = RangeEncoder()
    if model.kind == KIND_NET:
        # every context is known up front on the encoder side
        live = np.zeros_like(state)
        syms = np.empty((len(pos), CUBOID_SIZE), dtype=np.uint8)
        for idx, (k, i, j) in enumerate(pos.tolist()):
            syms[idx] = cuboid_from_state(live, k, i, j).ravel()
            live[k, i, j] = state[k, i, j]
        probs = net_probs_batch(model, syms)
        for (k, i, j), p in zip(pos.tolist(), probs.tolist()):
            enc.encode(int(codes[k, i, j]), p)
    else:
        counts = np.array(model.counts, dtype=np.int64, copy=True)
        live = np.zeros_like(state)
        for k, i, j in pos.tolist():
            key = freq_key(live, k, i, j)
            bit = int(codes[k, i, j])
            enc.encode(bit, _freq_prob(counts, key))
            counts[key, bit] += 1
            live[k, i, j] = bit + 1
    return enc.finish()


def decode_maps(data: bytes, mask, model, trace=None):
    """Decode the codes under ``mask``; returns (codes, bytes consumed).

    When ``trace`` is an (N, 100) uint8 array, the context used for each
    decoded bit is written into it in schedule order.
    """
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    codes = np.zeros(mask.shape, dtype=np.uint8)
    pos = _positions(mask)
    if not len(pos):
        return codes, 0
    dec = RangeDecoder(data)
    state = np.zeros(mask.shape, dtype=np.uint8)
    cub = np.zeros((CUBOID_DEPTH, CUBOID_SIDE, CUBOID_SIDE), dtype=np.uint8)
    counts = np.array(model.counts, dtype=np.int64, copy=True) if model.kind == KIND_FREQ else None
    for idx, (k, i, j) in enumerate(pos.tolist()):
        if model.kind == KIND_NET or trace is not None:
            cuboid_from_state(state, k, i, j, out=cub)
            if trace is not None:
                trace[idx] = cub.ravel()
        if model.kind == KIND_NET:
            bit = dec.decode(net_prob(model, cub.ravel()))
        else:
            key = freq_key(state, k, i, j)
            bit = dec.decode(_freq_prob(counts, key))
            counts[key, bit] += 1
        codes[k, i, j] = bit
        state[k, i, j] = bit + 1
    return codes, dec.consumed


def adam_update(value, grad, m, v, lr: float, beta1: float, beta2: float, eps: float,
                bc1: float, bc2: float, scratch=None) -> None:
    """One in-place ADAM update of float64 arrays (all the same shape)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    tmp = np.multiply(grad, grad, out=scratch)
    tmp *= 1.0 - beta2
    v += tmp
    np.divide(v, bc2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= lr / bc1
    value -= tmp
