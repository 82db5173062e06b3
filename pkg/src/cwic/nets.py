"""Encoder, decoder and importance-map networks plus the model file format.

Layer tables (input 3x128x128, n = 64 or 128)::

    encoder                                  decoder
    8x8x128 conv, pad 2, stride 4   128x32x32   1x1x512 conv            512x16x16
    residual block 128              128x32x32   residual block 512 (x2) 512x16x16
    4x4x256 conv, pad 1, stride 2   256x16x16   depth-to-space 2        128x32x32
    residual block 256 (x2)         256x16x16   3x3x256 conv, pad 1     256x32x32
    1x1xn conv + sigmoid            n x16x16    residual block 256      256x32x32
                                                depth-to-space 4        16x128x128
    importance net                              3x3x32 conv, pad 1      32x128x128
    3x3x128 conv, pad 1             128x16x16   3x3x3 conv, pad 1       3x128x128
    3x3x128 conv, pad 1             128x16x16
    1x1x1 conv + sigmoid            1x16x16

Every conv except the last of each network is followed by ReLU.

Model file layout (little-endian)::

    b"CWCM" | version u8 | n u8 | L u8 | flags u8 | float32 arrays in PARAM order

``flags`` bit 0 marks a model trained without the importance map.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from cwic import tensor as T
from cwic.errors import FormatError
from cwic.tensor import ShapeError, Tensor

MODEL_MAGIC = b"CWCM"
MODEL_VERSION = 1
FLAG_NO_IMPORTANCE = 0x01
_HEADER = struct.Struct("<4sBBBB")

LEVELS_FOR_N = {64: 16, 128: 32}


class ModelFormatError(FormatError):
    """Model file is malformed."""


def _resblock(prefix: str, c: int) -> list[tuple[str, tuple]]:
    return [(f"{prefix}.conv1", (c, c, 3, 3)), (f"{prefix}.conv2", (c, c, 3, 3))]


def layer_table(n: int) -> list[tuple[str, tuple]]:
    """(name, weight shape) for every conv layer, in file order."""
    return [
        ("enc.conv1", (128, 3, 8, 8)),
        *_resblock("enc.res1", 128),
        ("enc.conv2", (256, 128, 4, 4)),
        *_resblock("enc.res2", 256),
        *_resblock("enc.res3", 256),
        ("enc.conv3", (n, 256, 1, 1)),
        ("imp.conv1", (128, 256, 3, 3)),
        ("imp.conv2", (128, 128, 3, 3)),
        ("imp.conv3", (1, 128, 1, 1)),
        ("dec.conv1", (512, n, 1, 1)),
        *_resblock("dec.res1", 512),
        *_resblock("dec.res2", 512),
        ("dec.conv2", (256, 128, 3, 3)),
        *_resblock("dec.res3", 256),
        ("dec.conv3", (32, 16, 3, 3)),
        ("dec.conv4", (3, 32, 3, 3)),
    ]


@dataclass
class ModelParams:
    n: int
    L: int
    tensors: dict[str, Tensor] = field(default_factory=dict)
    importance_enabled: bool = True

    def __post_init__(self):
        if self.n not in LEVELS_FOR_N:
            raise ValueError(f"n must be 64 or 128, got {self.n}")
        if self.L != LEVELS_FOR_N[self.n]:
            raise ValueError(f"n={self.n} requires L={LEVELS_FOR_N[self.n]}, got {self.L}")
        if self.n % self.L:
            raise ValueError("n mod L must be 0")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(self.n, self.L,
                           {k: Tensor(v.data.copy(), requires_grad=True, name=k)
                            for k, v in self.tensors.items()},
                           self.importance_enabled)

    def round_to_float32(self) -> None:
        """Snap every value to float32 so save/load is exact."""
        for t in self.tensors.values():
            t.data[...] = t.data.astype(np.float32)

    def to_bytes(self) -> bytes:
        return serialize(self)

    def checksum(self) -> int:
        """CRC32 of the serialized model file."""
        return zlib.crc32(serialize(self)) & 0xFFFFFFFF


def init_params(seed: int, n: int = 64) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    Values are drawn as float32 so a freshly initialised model survives a
    save/load roundtrip bit for bit.
    """
    if n not in LEVELS_FOR_N:
        raise ValueError(f"n must be 64 or 128, got {n}")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in layer_table(n):
        fan_in = shape[1] * shape[2] * shape[3]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        tensors[name + ".w"] = Tensor(w, requires_grad=True, name=name + ".w")
        tensors[name + ".b"] = Tensor(np.zeros(shape[0]), requires_grad=True, name=name + ".b")
    return ModelParams(n, LEVELS_FOR_N[n], tensors)


def zero_params(n: int = 64) -> ModelParams:
    tensors = {}
    for name, shape in layer_table(n):
        tensors[name + ".w"] = Tensor(np.zeros(shape), requires_grad=True, name=name + ".w")
        tensors[name + ".b"] = Tensor(np.zeros(shape[0]), requires_grad=True, name=name + ".b")
    return ModelParams(n, LEVELS_FOR_N[n], tensors)


# --------------------------------------------------------------------------
# forward passes


def _conv(x: Tensor, params: ModelParams, name: str, stride: int = 1, pad: int = 0) -> Tensor:
    return T.conv2d(x, params[name + ".w"], params[name + ".b"], stride=stride, pad=pad)


def residual_block(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """relu(x + conv2(relu(conv1(x)))), 3x3 convs, no batch norm."""
    h = T.relu(_conv(x, params, prefix + ".conv1", pad=1))
    h = _conv(h, params, prefix + ".conv2", pad=1)
    return T.relu(T.add(x, h))


def encode(x: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Return (e, f): sigmoid encoder output and the last residual features."""
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"encode expects (N,3,H,W), got {x.shape}")
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise ShapeError(f"encode: spatial size {x.shape[2:]} not divisible by 8")
    h = T.relu(_conv(x, params, "enc.conv1", stride=4, pad=2))
    h = residual_block(h, params, "enc.res1")
    h = T.relu(_conv(h, params, "enc.conv2", stride=2, pad=1))
    h = residual_block(h, params, "enc.res2")
    f = residual_block(h, params, "enc.res3")
    e = T.sigmoid(_conv(f, params, "enc.conv3"))
    return e, f


def importance(f: Tensor, params: ModelParams) -> Tensor:
    if f.data.ndim != 4 or f.shape[1] != 256:
        raise ShapeError(f"importance expects (N,256,h,w), got {f.shape}")
    h = T.relu(_conv(f, params, "imp.conv1", pad=1))
    h = T.relu(_conv(h, params, "imp.conv2", pad=1))
    return T.sigmoid(_conv(h, params, "imp.conv3"))


def decode(c: Tensor, params: ModelParams, clamp: bool = False) -> Tensor:
    """Synthesis transform.  ``clamp`` limits output to [0,1] (evaluation
    only; the clamp is not differentiated)."""
    if c.data.ndim != 4 or c.shape[1] != params.n:
        raise ShapeError(f"decode expects (N,{params.n},h,w), got {c.shape}")
    h = T.relu(_conv(c, params, "dec.conv1"))
    h = residual_block(h, params, "dec.res1")
    h = residual_block(h, params, "dec.res2")
    h = T.depth_to_space(h, 2)
    h = T.relu(_conv(h, params, "dec.conv2", pad=1))
    h = residual_block(h, params, "dec.res3")
    h = T.depth_to_space(h, 4)
    h = T.relu(_conv(h, params, "dec.conv3", pad=1))
    out = _conv(h, params, "dec.conv4", pad=1)
    if clamp:
        return Tensor(np.clip(out.data, 0.0, 1.0))
    return out


# --------------------------------------------------------------------------
# serialization


def serialize(params: ModelParams) -> bytes:
    flags = 0 if params.importance_enabled else FLAG_NO_IMPORTANCE
    parts = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, params.n, params.L, flags)]
    for name, _shape in layer_table(params.n):
        for suffix in (".w", ".b"):
            parts.append(params[name + suffix].data.astype("<f4").tobytes())
    return b"".join(parts)


def deserialize(buf: bytes) -> ModelParams:
    if len(buf) < _HEADER.size:
        raise ModelFormatError(f"model file truncated at offset {len(buf)}: header needs {_HEADER.size} bytes")
    magic, version, n, L, flags = _HEADER.unpack_from(buf, 0)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r} at offset 0, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version} at offset 4")
    if n not in LEVELS_FOR_N or L != LEVELS_FOR_N[n]:
        raise ModelFormatError(f"invalid (n, L) = ({n}, {L}) at offset 5")
    off = _HEADER.size
    tensors = {}
    for name, shape in layer_table(n):
        for suffix, shp in ((".w", shape), (".b", (shape[0],))):
            count = int(np.prod(shp))
            end = off + 4 * count
            if end > len(buf):
                raise ModelFormatError(
                    f"model file truncated at offset {len(buf)}: {name}{suffix} needs bytes {off}..{end}")
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shp)
            tensors[name + suffix] = Tensor(arr, requires_grad=True, name=name + suffix)
            off = end
    if off != len(buf):
        raise ModelFormatError(f"trailing data after offset {off} ({len(buf) - off} bytes)")
    return ModelParams(n, L, tensors, importance_enabled=not (flags & FLAG_NO_IMPORTANCE))


def save_model(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
