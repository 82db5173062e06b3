"""Probability models over context cuboids and the entropy-model file.

Two model kinds share one interface:

* :class:`NetPredictor`: one-hot cuboid (300 inputs) -> 128 -> 64 -> 1,
  ReLU/ReLU/sigmoid, trained by minimising masked cross-entropy.
* :class:`FreqTable`: adaptive counts keyed by the five nearest
  previously coded bits, Laplace smoothed.

File layout (little-endian)::

    b"CWEN" | version u8 | kind u8 (0 net, 1 table) | codes model | importance model

A net model stores w1, b1, w2, b2, w3, b3 as float32; a table stores
243 x 2 uint32 counts.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from cwic import tensor as T
from cwic._backend import kernels
from cwic._pykernels import FREQ_KEYS, KIND_FREQ, KIND_NET
from cwic.entropy.context import SIZE, all_contexts, one_hot
from cwic.errors import FormatError
from cwic.tensor import Tape, Tensor

log = logging.getLogger(__name__)

ENTROPY_MAGIC = b"CWEN"
ENTROPY_VERSION = 1
HIDDEN = (128, 64)
P_MIN = 1e-4
P_MAX = 1.0 - 1e-4
_HEADER = struct.Struct("<4sBB")


class EntropyFormatError(FormatError):
    """Entropy-model file is malformed."""


@dataclass
class NetPredictor:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float
    kind: int = KIND_NET

    @classmethod
    def zeros(cls) -> "NetPredictor":
        h1, h2 = HIDDEN
        return cls(np.zeros((3 * SIZE, h1)), np.zeros(h1), np.zeros((h1, h2)), np.zeros(h2),
                   np.zeros(h2), 0.0)

    @classmethod
    def random(cls, seed: int = 0) -> "NetPredictor":
        rng = np.random.default_rng(seed)
        h1, h2 = HIDDEN

        def u(fan_in, shape):
            b = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-b, b, size=shape).astype(np.float32).astype(np.float64)

        # a one-hot input has exactly SIZE active entries
        return cls(u(SIZE, (3 * SIZE, h1)), np.zeros(h1), u(h1, (h1, h2)), np.zeros(h2),
                   u(h2, (h2,)), 0.0)

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, np.array([self.b3])]

    def predict(self, cuboids) -> np.ndarray:
        """P(bit = 1) per cuboid, clamped to [1e-4, 1 - 1e-4]."""
        syms = np.asarray(cuboids, dtype=np.uint8).reshape(-1, SIZE)
        return np.clip(kernels.net_probs_batch(self, syms), P_MIN, P_MAX)

    def round_to_float32(self) -> None:
        for a in (self.w1, self.b1, self.w2, self.b2, self.w3):
            a[...] = a.astype(np.float32)
        self.b3 = float(np.float32(self.b3))


def net_logits(X: Tensor, ts: dict) -> Tensor:
    """Differentiable forward pass of the predictor (logit output)."""
    h = T.relu(T.add_bias(T.matmul(X, ts["w1"]), ts["b1"]))
    h = T.relu(T.add_bias(T.matmul(h, ts["w2"]), ts["b2"]))
    return T.add_bias(T.matmul(h, ts["w3"]), ts["b3"])


@dataclass
class FreqTable:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((FREQ_KEYS, 2), dtype=np.int64))
    kind: int = KIND_FREQ

    @staticmethod
    def key_from_cuboid(cub) -> int:
        """Same key as the coder: left, up-left, up, up-right, previous map."""
        c = np.asarray(cub).reshape(4, 5, 5)
        return int(c[3, 2, 1]) + 3 * int(c[3, 1, 1]) + 9 * int(c[3, 1, 2]) \
            + 27 * int(c[3, 1, 3]) + 81 * int(c[2, 2, 2])

    def prob_for_key(self, key: int) -> float:
        zeros, ones = (int(v) for v in self.counts[key])
        return min(max((ones + 1.0) / (zeros + ones + 2.0), P_MIN), P_MAX)

    def predict(self, cuboids) -> np.ndarray:
        cubs = np.asarray(cuboids).reshape(-1, SIZE)
        return np.array([self.prob_for_key(self.key_from_cuboid(c)) for c in cubs])

    def update(self, cuboid, bit: int) -> None:
        self.counts[self.key_from_cuboid(cuboid), int(bit)] += 1


def predict(model, cuboid) -> float:
    """Probability that the bit with this context is 1."""
    return float(model.predict(np.asarray(cuboid).reshape(1, SIZE))[0])


@dataclass
class EntropyModel:
    """Predictors for the binary codes and for the importance bitplanes."""

    codes: NetPredictor | FreqTable
    importance: NetPredictor | FreqTable

    @property
    def kind(self) -> int:
        return self.codes.kind

    @classmethod
    def frequency_tables(cls) -> "EntropyModel":
        return cls(FreqTable(), FreqTable())

    @classmethod
    def untrained(cls) -> "EntropyModel":
        return cls(NetPredictor.zeros(), NetPredictor.zeros())


# --------------------------------------------------------------------------
# corpus and training


@dataclass
class Corpus:
    contexts: np.ndarray  # (B, 100) uint8
    bits: np.ndarray      # (B,) uint8
    weights: np.ndarray   # (B,) float, the importance mask value

    def __len__(self) -> int:
        return len(self.bits)

    @classmethod
    def concat(cls, parts) -> "Corpus":
        parts = list(parts)
        if not parts:
            return cls(np.zeros((0, SIZE), np.uint8), np.zeros(0, np.uint8), np.zeros(0))
        return cls(np.concatenate([p.contexts for p in parts]),
                   np.concatenate([p.bits for p in parts]),
                   np.concatenate([p.weights for p in parts]))


def harvest(codes, mask, include_masked: bool = False) -> Corpus:
    """Context/bit pairs from one code volume.

    Only coded positions are taken by default.  ``include_masked`` also
    emits masked-out positions with weight 0 (they carry no loss).
    """
    codes = np.asarray(codes, dtype=np.uint8)
    mask = np.asarray(mask, dtype=np.uint8)
    ctx = all_contexts(codes, mask)
    pos = np.argwhere(mask != 0)
    bits = codes[pos[:, 0], pos[:, 1], pos[:, 2]]
    corpus = Corpus(ctx, bits.astype(np.uint8), np.ones(len(bits)))
    if include_masked:
        off = np.argwhere(mask == 0)
        if len(off):
            extra = Corpus(all_contexts(codes, mask, off),
                           codes[off[:, 0], off[:, 1], off[:, 2]], np.zeros(len(off)))
            corpus = Corpus.concat([corpus, extra])
    return corpus


def masked_nll(model, corpus: Corpus) -> float:
    """Mask-weighted cross-entropy in bits per coded bit."""
    w = np.asarray(corpus.weights, dtype=np.float64)
    if w.sum() <= 0:
        raise ValueError("corpus has no coded bits")
    p = model.predict(corpus.contexts)
    b = corpus.bits.astype(bool)
    return float(np.sum(w * -np.log2(np.where(b, p, 1.0 - p))) / w.sum())


def train_entropy(model, corpus: Corpus, lr_ladder=(1e-4, 1e-5, 1e-6), max_iters: int = 3000,
                  batch_size: int = 256, seed: int = 0, window: int = 50, patience: int = 3,
                  total_iters: int | None = None):
    """Fit a predictor to a corpus; returns the fitted model.

    Net predictors minimise mask-weighted cross-entropy with ADAM over the
    learning-rate ladder.  Frequency tables simply accumulate counts.
    """
    from cwic.train import AdamState, adam_step, run_ladder

    if len(corpus) == 0 or np.sum(corpus.weights) <= 0:
        raise ValueError("entropy training needs a non-empty corpus")
    if isinstance(model, FreqTable):
        out = FreqTable(model.counts.copy())
        keep = corpus.weights > 0
        for cub, bit in zip(corpus.contexts[keep], corpus.bits[keep]):
            out.update(cub, bit)
        return out

    ts = {name: Tensor(a.copy().reshape(shape), requires_grad=True, name=name)
          for name, a, shape in zip(("w1", "b1", "w2", "b2", "w3", "b3"), model.arrays(),
                                    [model.w1.shape, model.b1.shape, model.w2.shape,
                                     model.b2.shape, (model.w3.size, 1), (1,)])}
    values = {k: t.data for k, t in ts.items()}
    state = AdamState()
    rng = np.random.default_rng(seed)
    keep = np.flatnonzero(corpus.weights > 0)
    X_all = corpus.contexts[keep]
    y_all = corpus.bits[keep].astype(np.float64)
    w_all = corpus.weights[keep]

    def step(lr):
        idx = rng.integers(0, len(keep), size=min(batch_size, len(keep)))
        X = Tensor(one_hot(X_all[idx]))
        for t in ts.values():
            t.zero_grad()
        with Tape() as tape:
            loss = T.bce_with_logits(net_logits(X, ts), y_all[idx], w_all[idx])
            loss = T.scale(loss, 1.0 / max(w_all[idx].sum(), 1e-12))
        tape.backward(loss)
        adam_step(values, {k: t.grad for k, t in ts.items()}, state, lr)
        return float(loss.data)

    run_ladder(step, lr_ladder, max_iters, window, patience, total_iters,
               lambda it, lr, avg: log.info("entropy iter %d lr %.0e loss %.4f bits", it, lr, avg))
    out = NetPredictor(values["w1"], values["b1"], values["w2"], values["b2"],
                       values["w3"].ravel().copy(), float(values["b3"][0]))
    out.round_to_float32()
    return out


# --------------------------------------------------------------------------
# serialization


def _pack_predictor(model) -> bytes:
    if isinstance(model, NetPredictor):
        return b"".join(a.astype("<f4").tobytes() for a in model.arrays())
    return np.asarray(model.counts).astype("<u4").tobytes()


def _net_sizes() -> list[tuple]:
    h1, h2 = HIDDEN
    return [(3 * SIZE, h1), (h1,), (h1, h2), (h2,), (h2,), (1,)]


def serialize_entropy(model: EntropyModel) -> bytes:
    if model.codes.kind != model.importance.kind:
        raise ValueError("codes and importance predictors must be the same kind")
    return _HEADER.pack(ENTROPY_MAGIC, ENTROPY_VERSION, model.kind) + \
        _pack_predictor(model.codes) + _pack_predictor(model.importance)


def deserialize_entropy(buf: bytes) -> EntropyModel:
    if len(buf) < _HEADER.size:
        raise EntropyFormatError(f"entropy file truncated at offset {len(buf)}")
    magic, version, kind = _HEADER.unpack_from(buf, 0)
    if magic != ENTROPY_MAGIC:
        raise EntropyFormatError(f"bad magic {magic!r} at offset 0, expected {ENTROPY_MAGIC!r}")
    if version != ENTROPY_VERSION:
        raise EntropyFormatError(f"unsupported entropy-model version {version}")
    off = _HEADER.size
    preds = []
    for _ in range(2):
        if kind == KIND_NET:
            arrs = []
            for shape in _net_sizes():
                count = int(np.prod(shape))
                if off + 4 * count > len(buf):
                    raise EntropyFormatError(f"entropy file truncated at offset {len(buf)}")
                arrs.append(np.frombuffer(buf, "<f4", count, off).astype(np.float64).reshape(shape))
                off += 4 * count
            preds.append(NetPredictor(*arrs[:5], float(arrs[5][0])))
        elif kind == KIND_FREQ:
            count = FREQ_KEYS * 2
            if off + 4 * count > len(buf):
                raise EntropyFormatError(f"entropy file truncated at offset {len(buf)}")
            counts = np.frombuffer(buf, "<u4", count, off).astype(np.int64).reshape(FREQ_KEYS, 2)
            preds.append(FreqTable(counts))
            off += 4 * count
        else:
            raise EntropyFormatError(f"unknown entropy model kind {kind} at offset 5")
    if off != len(buf):
        raise EntropyFormatError(f"trailing data after offset {off}")
    return EntropyModel(*preds)


def save_entropy(model: EntropyModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_entropy(model))


def load_entropy(path) -> EntropyModel:
    with open(path, "rb") as fh:
        return deserialize_entropy(fh.read())
