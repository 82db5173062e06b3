# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: range coder and context-model map coding.

Mirrors ``cwic._pykernels`` exactly; see that module for the semantics.
Built with -ffp-contract=off so the predictor's multiply/add sequence
rounds the same way as the numpy fallback.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, sqrt
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int64_t

from cwic.errors import TruncatedStream
from cwic._pykernels import KIND_NET, KIND_FREQ

cnp.import_array()

DEF PROB_BITS = 24
DEF PROB_ONE = 16777216
DEF TOP = 16777216
DEF CUBOID_SIZE = 100
DEF P_MIN = 1e-4
DEF P_MAX = 1.0 - 1e-4

cdef inline uint32_t prob_to_int(double p) noexcept nogil:
    cdef int64_t q
    if p < P_MIN:
        p = P_MIN
    elif p > P_MAX:
        p = P_MAX
    q = <int64_t>floor(p * PROB_ONE + 0.5)
    if q < 1:
        q = 1
    elif q > PROB_ONE - 1:
        q = PROB_ONE - 1
    return <uint32_t>q


cdef inline double sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef class RangeEncoder:
    cdef uint64_t low
    cdef uint32_t rng
    cdef uint32_t cache
    cdef int64_t cache_size
    cdef bytearray out
    cdef public int64_t count

    def __cinit__(self):
        self.low = 0
        self.rng = 0xFFFFFFFF
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self.count = 0

    cdef inline void _shift_low(self):
        cdef uint32_t carry, temp
        if <uint32_t>self.low < 0xFF000000 or (self.low >> 32) != 0:
            carry = <uint32_t>(self.low >> 32)
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = <uint32_t>((self.low >> 24) & 0xFF)
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    cdef inline void put(self, int bit, double p1):
        cdef uint32_t bound = <uint32_t>((<uint64_t>self.rng * prob_to_int(p1)) >> PROB_BITS)
        if bit:
            self.rng = bound
        else:
            self.low += bound
            self.rng -= bound
        while self.rng < TOP:
            self.rng = self.rng << 8
            self._shift_low()
        self.count += 1

    def encode(self, int bit, double p1):
        self.put(bit, p1)

    def finish(self):
        cdef int t
        if self.count == 0:
            return b""
        for t in range(5):
            self._shift_low()
        return bytes(self.out[1:])


cdef class RangeDecoder:
    cdef const uint8_t[:] data
    cdef Py_ssize_t pos
    cdef Py_ssize_t size
    cdef uint32_t rng
    cdef uint32_t code
    cdef object _keep

    def __cinit__(self, data):
        cdef int t
        self._keep = bytes(data)
        self.data = self._keep
        self.size = len(self._keep)
        self.pos = 0
        self.rng = 0xFFFFFFFF
        self.code = 0
        for t in range(4):
            self.code = (self.code << 8) | self._next()

    cdef inline uint32_t _next(self) except? 0xFFFFFFFF:
        if self.pos >= self.size:
            raise TruncatedStream(
                f"range decoder needs byte {self.pos} of a {self.size}-byte stream")
        self.pos += 1
        return self.data[self.pos - 1]

    @property
    def consumed(self):
        return self.pos

    cdef inline int get(self, double p1) except -1:
        cdef uint32_t bound = <uint32_t>((<uint64_t>self.rng * prob_to_int(p1)) >> PROB_BITS)
        cdef int bit
        if self.code < bound:
            self.rng = bound
            bit = 1
        else:
            self.code -= bound
            self.rng -= bound
            bit = 0
        while self.rng < TOP:
            self.rng = self.rng << 8
            self.code = (self.code << 8) | self._next()
        return bit

    def decode(self, double p1):
        return self.get(p1)


def encode_bits(bits, probs):
    cdef const uint8_t[:] b = np.ascontiguousarray(bits, dtype=np.uint8).ravel()
    cdef const double[:] p = np.ascontiguousarray(probs, dtype=np.float64).ravel()
    cdef Py_ssize_t idx
    if b.shape[0] != p.shape[0]:
        raise ValueError(f"{b.shape[0]} bits but {p.shape[0]} probabilities")
    cdef RangeEncoder enc = RangeEncoder()
    for idx in range(b.shape[0]):
        enc.put(b[idx], p[idx])
    return enc.finish()


def decode_bits(data, probs):
    cdef const double[:] p = np.ascontiguousarray(probs, dtype=np.float64).ravel()
    out = np.zeros(p.shape[0], dtype=np.uint8)
    cdef uint8_t[:] o = out
    cdef Py_ssize_t idx
    if p.shape[0] == 0:
        return out, 0
    cdef RangeDecoder dec = RangeDecoder(data)
    for idx in range(p.shape[0]):
        o[idx] = dec.get(p[idx])
    return out, dec.pos


# --------------------------------------------------------------------------
# contexts and predictors


cdef inline void fill_cuboid(const uint8_t[:, :, ::1] state, Py_ssize_t k, Py_ssize_t i,
                             Py_ssize_t j, uint8_t* cub) noexcept nogil:
    cdef Py_ssize_t n = state.shape[0], h = state.shape[1], w = state.shape[2]
    cdef Py_ssize_t d, dy, dx, kk, ii, jj, t = 0
    for d in range(4):
        kk = k - 3 + d
        for dy in range(5):
            ii = i - 2 + dy
            for dx in range(5):
                jj = j - 2 + dx
                if kk < 0 or ii < 0 or ii >= h or jj < 0 or jj >= w:
                    cub[t] = 0
                else:
                    cub[t] = state[kk, ii, jj]
                t += 1


cdef inline int freq_key(const uint8_t[:, :, ::1] state, Py_ssize_t k, Py_ssize_t i,
                         Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t w = state.shape[2]
    cdef int key = 0
    if j > 0:
        key += state[k, i, j - 1]
    if i > 0:
        if j > 0:
            key += 3 * state[k, i - 1, j - 1]
        key += 9 * state[k, i - 1, j]
        if j + 1 < w:
            key += 27 * state[k, i - 1, j + 1]
    if k > 0:
        key += 81 * state[k - 1, i, j]
    return key


cdef class _Net:
    cdef const double[:, ::1] w1
    cdef const double[::1] b1
    cdef const double[:, ::1] w2
    cdef const double[::1] b2
    cdef const double[::1] w3
    cdef double b3
    cdef double[::1] h1
    cdef double[::1] h2

    def __init__(self, model):
        self.w1 = np.ascontiguousarray(model.w1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(model.b1, dtype=np.float64)
        self.w2 = np.ascontiguousarray(model.w2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(model.b2, dtype=np.float64)
        self.w3 = np.ascontiguousarray(model.w3, dtype=np.float64).ravel()
        self.b3 = float(model.b3)
        if self.w1.shape[0] != 3 * CUBOID_SIZE:
            raise ValueError(f"first layer must have {3 * CUBOID_SIZE} inputs")
        self.h1 = np.zeros(self.w1.shape[1])
        self.h2 = np.zeros(self.w2.shape[1])

    cdef double prob(self, const uint8_t* cub) noexcept nogil:
        cdef Py_ssize_t H1 = self.w1.shape[1], H2 = self.w2.shape[1]
        cdef Py_ssize_t o, pos, i
        cdef double acc, prod
        for o in range(H1):
            self.h1[o] = self.b1[o]
        for pos in range(CUBOID_SIZE):
            for o in range(H1):
                self.h1[o] = self.h1[o] + self.w1[pos * 3 + cub[pos], o]
        for o in range(H1):
            if self.h1[o] < 0.0:
                self.h1[o] = 0.0
        for o in range(H2):
            acc = self.b2[o]
            for i in range(H1):
                prod = self.h1[i] * self.w2[i, o]
                acc = acc + prod
            self.h2[o] = acc if acc > 0.0 else 0.0
        acc = self.b3
        for i in range(H2):
            prod = self.h2[i] * self.w3[i]
            acc = acc + prod
        return sigmoid(acc)


def net_probs_batch(model, syms):
    cdef const uint8_t[:, ::1] s = np.ascontiguousarray(syms, dtype=np.uint8).reshape(-1, CUBOID_SIZE)
    cdef _Net net = _Net(model)
    out = np.empty(s.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t idx
    for idx in range(s.shape[0]):
        o[idx] = net.prob(&s[idx, 0])
    return out


def encode_maps(codes, mask, model):
    cdef const uint8_t[:, :, ::1] c = np.ascontiguousarray(codes, dtype=np.uint8)
    cdef const uint8_t[:, :, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    if c.shape[0] != m.shape[0] or c.shape[1] != m.shape[1] or c.shape[2] != m.shape[2]:
        raise ValueError("codes and mask must have equal shapes")
    state_arr = np.zeros((c.shape[0], c.shape[1], c.shape[2]), dtype=np.uint8)
    cdef uint8_t[:, :, ::1] state = state_arr
    cdef uint8_t cub[CUBOID_SIZE]
    cdef RangeEncoder enc = RangeEncoder()
    cdef _Net net = None
    cdef int64_t[:, ::1] counts
    cdef bint use_net = model.kind == KIND_NET
    cdef Py_ssize_t k, i, j
    cdef int bit, key
    cdef double p
    if use_net:
        net = _Net(model)
    else:
        counts = np.array(model.counts, dtype=np.int64, copy=True)
    for k in range(c.shape[0]):
        for i in range(c.shape[1]):
            for j in range(c.shape[2]):
                if not m[k, i, j]:
                    continue
                bit = 1 if c[k, i, j] else 0
                if use_net:
                    fill_cuboid(state, k, i, j, cub)
                    p = net.prob(cub)
                    enc.put(bit, p)
                else:
                    key = freq_key(state, k, i, j)
                    p = (counts[key, 1] + 1.0) / (counts[key, 0] + counts[key, 1] + 2.0)
                    enc.put(bit, p)
                    counts[key, bit] += 1
                state[k, i, j] = bit + 1
    return enc.finish()


def decode_maps(data, mask, model, trace=None):
    cdef const uint8_t[:, :, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    codes = np.zeros((m.shape[0], m.shape[1], m.shape[2]), dtype=np.uint8)
    if not np.any(np.asarray(m)):
        return codes, 0
    cdef uint8_t[:, :, ::1] c = codes
    state_arr = np.zeros_like(codes)
    cdef uint8_t[:, :, ::1] state = state_arr
    cdef uint8_t cub[CUBOID_SIZE]
    cdef uint8_t[:, ::1] tr
    cdef bint tracing = trace is not None
    if tracing:
        tr = trace
    cdef RangeDecoder dec = RangeDecoder(data)
    cdef _Net net = None
    cdef int64_t[:, ::1] counts
    cdef bint use_net = model.kind == KIND_NET
    cdef Py_ssize_t k, i, j, t, idx = 0
    cdef int bit, key
    if use_net:
        net = _Net(model)
    else:
        counts = np.array(model.counts, dtype=np.int64, copy=True)
    for k in range(m.shape[0]):
        for i in range(m.shape[1]):
            for j in range(m.shape[2]):
                if not m[k, i, j]:
                    continue
                if use_net or tracing:
                    fill_cuboid(state, k, i, j, cub)
                    if tracing:
                        for t in range(CUBOID_SIZE):
                            tr[idx, t] = cub[t]
                if use_net:
                    bit = dec.get(net.prob(cub))
                else:
                    key = freq_key(state, k, i, j)
                    bit = dec.get((counts[key, 1] + 1.0) / (counts[key, 0] + counts[key, 1] + 2.0))
                    counts[key, bit] += 1
                c[k, i, j] = bit
                state[k, i, j] = bit + 1
                idx += 1
    return codes, dec.pos


# --------------------------------------------------------------------------
# optimizer


def adam_update(value, grad, m, v, double lr, double beta1, double beta2, double eps,
                double bc1, double bc2, scratch=None):
    """Fused in-place ADAM update; same arithmetic as the Python fallback."""
    cdef double[::1] x = value.reshape(-1)
    cdef const double[::1] g = grad.reshape(-1)
    cdef double[::1] mm = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, size = x.shape[0]
    cdef double gi, c1 = 1.0 - beta1, c2 = 1.0 - beta2, step = lr / bc1
    if g.shape[0] != size or mm.shape[0] != size or vv.shape[0] != size:
        raise ValueError("adam_update: size mismatch")
    with nogil:
        for i in range(size):
            gi = g[i]
            mm[i] = mm[i] * beta1 + c1 * gi
            vv[i] = vv[i] * beta2 + (gi * gi) * c2
            x[i] -= (mm[i] / (sqrt(vv[i] / bc2) + eps)) * step
