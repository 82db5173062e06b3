"""Compressed-stream format, PPM image I/O and compress/decompress.

Stream layout (little-endian)::

    offset  size  field
    0       4     magic b"CWIC"
    4       1     version
    5       1     flags
    6       2     width  (original, before padding)
    8       2     height
    10      1     n  (code channels)
    11      1     L  (importance levels)
    12      1     n_b (importance bitplanes)
    13      4     CRC32 of the model file the stream was made with
    17      4     CRC32 of bytes 0..16
    21      4     importance payload length
    25      ...   importance payload
    ...     4     code payload length
    ...     ...   code payload

Flags: bit 0 code payload is entropy coded, bit 1 importance map disabled
(no importance payload, every code bit kept), bit 2 importance payload is
entropy coded, bit 3 entropy coding used adaptive frequency tables.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cwic import nets, quant
from cwic.entropy import payload
from cwic.entropy.bitplanes import plane_count
from cwic.entropy.models import EntropyModel
from cwic.errors import BitCountMismatch, FormatError, TruncatedStream
from cwic.nets import ModelParams
from cwic.quant import CodeBundle
from cwic.tensor import Tensor

STREAM_MAGIC = b"CWIC"
STREAM_VERSION = 1

FLAG_CODES_CODED = 0x01
FLAG_NO_IMPORTANCE = 0x02
FLAG_IMP_CODED = 0x04
FLAG_FREQ_TABLE = 0x08
_KNOWN_FLAGS = FLAG_CODES_CODED | FLAG_NO_IMPORTANCE | FLAG_IMP_CODED | FLAG_FREQ_TABLE

_FIXED = struct.Struct("<4sBBHHBBBI")
_U32 = struct.Struct("<I")
HEADER_SIZE = _FIXED.size + 4


class StreamError(FormatError):
    """Compressed stream is malformed."""


class ModelMismatch(StreamError):
    """Stream was produced with a different model file."""


# --------------------------------------------------------------------------
# images


@dataclass
class RawImage:
    """8-bit RGB image, pixels shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_unit(self) -> np.ndarray:
        """(3, H, W) float64 in [0, 1]."""
        return self.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0

    @classmethod
    def from_unit(cls, arr: np.ndarray) -> "RawImage":
        arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
        return cls(np.rint(arr * 255.0).astype(np.uint8).transpose(1, 2, 0))


def _ppm_tokens(buf: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(buf[start:pos])
    return tokens, pos


def parse_ppm(buf: bytes) -> RawImage:
    if buf[:2] != b"P6":
        raise FormatError(f"unsupported PPM variant {buf[:2]!r}: only binary P6 is accepted")
    tokens, pos = _ppm_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"malformed PPM header {tokens!r}") from None
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}: only 255 is accepted")
    if width <= 0 or height <= 0:
        raise FormatError(f"PPM has empty dimensions {width}x{height}")
    pos += 1  # single whitespace byte before the raster
    need = width * height * 3
    data = buf[pos:pos + need]
    if len(data) < need:
        raise FormatError(f"PPM raster truncated: {len(data)} of {need} bytes")
    return RawImage(np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3))


def read_ppm(path) -> RawImage:
    return parse_ppm(Path(path).read_bytes())


def format_ppm(image: RawImage) -> bytes:
    return b"P6\n%d %d\n255\n" % (image.width, image.height) + image.pixels.tobytes()


def write_ppm(image: RawImage, path) -> None:
    Path(path).write_bytes(format_ppm(image))


def pad_to_multiple(pixels: np.ndarray, m: int = 8) -> np.ndarray:
    """Edge-replicate (H, W, 3) pixels so both sides are multiples of ``m``."""
    h, w = pixels.shape[:2]
    ph, pw = (-h) % m, (-w) % m
    return np.pad(pixels, ((0, ph), (0, pw), (0, 0)), mode="edge")


# --------------------------------------------------------------------------
# stream


@dataclass
class CompressedStream:
    flags: int
    width: int
    height: int
    n: int
    L: int
    n_b: int
    model_crc: int
    imp_payload: bytes
    code_payload: bytes
    version: int = STREAM_VERSION

    @property
    def code_h(self) -> int:
        return (self.height + 7) // 8

    @property
    def code_w(self) -> int:
        return (self.width + 7) // 8

    def to_bytes(self) -> bytes:
        fixed = _FIXED.pack(STREAM_MAGIC, self.version, self.flags, self.width, self.height,
                            self.n, self.L, self.n_b, self.model_crc)
        return b"".join([fixed, _U32.pack(zlib.crc32(fixed) & 0xFFFFFFFF),
                         _U32.pack(len(self.imp_payload)), self.imp_payload,
                         _U32.pack(len(self.code_payload)), self.code_payload])

    def __len__(self) -> int:
        return HEADER_SIZE + 8 + len(self.imp_payload) + len(self.code_payload)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CompressedStream":
        if len(buf) < 4 or buf[:4] != STREAM_MAGIC:
            raise StreamError(f"bad magic {bytes(buf[:4])!r}, expected {STREAM_MAGIC!r}")
        if len(buf) < HEADER_SIZE:
            raise TruncatedStream(f"stream header truncated: {len(buf)} of {HEADER_SIZE} bytes")
        fields = _FIXED.unpack_from(buf, 0)
        _, version, flags, width, height, n, L, n_b, model_crc = fields
        (hcrc,) = _U32.unpack_from(buf, _FIXED.size)
        if hcrc != zlib.crc32(buf[:_FIXED.size]) & 0xFFFFFFFF:
            raise StreamError("header checksum mismatch")
        if version != STREAM_VERSION:
            raise StreamError(f"unsupported stream version {version}")
        if flags & ~_KNOWN_FLAGS:
            raise StreamError(f"unknown flag bits {flags:#04x}")
        if width == 0 or height == 0:
            raise StreamError("stream declares an empty image")
        if n not in nets.LEVELS_FOR_N or L != nets.LEVELS_FOR_N[n] or n_b != plane_count(L):
            raise StreamError(f"inconsistent code parameters n={n} L={L} n_b={n_b}")
        off = HEADER_SIZE
        payloads = []
        for what in ("importance", "code"):
            if off + 4 > len(buf):
                raise TruncatedStream(f"{what} payload length missing at offset {off}")
            (size,) = _U32.unpack_from(buf, off)
            off += 4
            if off + size > len(buf):
                raise TruncatedStream(
                    f"{what} payload truncated: declares {size} bytes, {len(buf) - off} available")
            payloads.append(bytes(buf[off:off + size]))
            off += size
        if off != len(buf):
            raise StreamError(f"{len(buf) - off} trailing bytes after code payload")
        return cls(flags, width, height, n, L, n_b, model_crc, *payloads, version=version)


@dataclass
class CompressOptions:
    entropy_codes: bool = True
    entropy_importance: bool = True
    importance_disabled: bool = False

    @classmethod
    def variant(cls, name: str) -> "CompressOptions":
        """Named coding variants: full, no-entropy, codes-only, imp-only."""
        table = {
            "full": cls(True, True),
            "no-entropy": cls(False, False),
            "codes-only": cls(True, False),
            "imp-only": cls(False, True),
        }
        if name not in table:
            raise ValueError(f"unknown variant {name!r}")
        return table[name]


def analyze(image: RawImage, params: ModelParams, importance_disabled: bool = False) -> CodeBundle:
    """Run the encoder side of the network and quantize to a CodeBundle."""
    if image.width == 0 or image.height == 0:
        raise ValueError("cannot compress an empty image")
    padded = pad_to_multiple(image.pixels)
    x = Tensor(padded.transpose(2, 0, 1)[None].astype(np.float64) / 255.0)
    e, f = nets.encode(x, params)
    disabled = importance_disabled or not params.importance_enabled
    p = None if disabled else nets.importance(f, params).data[0, 0]
    return quant.make_bundle(e.data[0], p, params.n, params.L, importance_enabled=not disabled)


def encode_bundle(bundle: CodeBundle, width: int, height: int, entropy_model: EntropyModel | None,
                  opts: CompressOptions, model_crc: int = 0) -> CompressedStream:
    """Serialize a CodeBundle, keeping each payload's smaller representation."""
    disabled = opts.importance_disabled
    flags = FLAG_NO_IMPORTANCE if disabled else 0
    if entropy_model is not None and entropy_model.kind == 1:
        flags |= FLAG_FREQ_TABLE
    if disabled:
        imp = b""
    else:
        imp = payload.raw_importance(bundle.imp_q, bundle.L)
        if opts.entropy_importance and entropy_model is not None:
            coded = payload.encode_importance(bundle.imp_q, entropy_model, bundle.L)
            if len(coded) < len(imp):
                imp, flags = coded, flags | FLAG_IMP_CODED
    codes = payload.raw_codes(bundle.codes, bundle.mask)
    if opts.entropy_codes and entropy_model is not None:
        coded = payload.encode_codes(bundle.codes, bundle.mask, entropy_model)
        if len(coded) < len(codes):
            codes, flags = coded, flags | FLAG_CODES_CODED
    if not flags & (FLAG_CODES_CODED | FLAG_IMP_CODED):
        flags &= ~FLAG_FREQ_TABLE
    return CompressedStream(flags, width, height, bundle.n, bundle.L, plane_count(bundle.L),
                            model_crc, imp, codes)


def compress(image: RawImage, params: ModelParams, entropy_model: EntropyModel | None,
             opts: CompressOptions | None = None) -> CompressedStream:
    opts = opts or CompressOptions()
    if not params.importance_enabled and not opts.importance_disabled:
        opts = CompressOptions(opts.entropy_codes, opts.entropy_importance, True)
    bundle = analyze(image, params, opts.importance_disabled)
    return encode_bundle(bundle, image.width, image.height, entropy_model, opts, params.checksum())


def decode_bundle(stream: CompressedStream, entropy_model: EntropyModel | None) -> CodeBundle:
    """Recover the CodeBundle from a parsed stream."""
    n, L, h, w = stream.n, stream.L, stream.code_h, stream.code_w
    flags = stream.flags
    model = entropy_model
    if flags & FLAG_FREQ_TABLE:
        # adaptive tables start from the supplied counts, or empty
        if model is None or model.kind != 1:
            model = EntropyModel.frequency_tables()
    elif flags & (FLAG_CODES_CODED | FLAG_IMP_CODED):
        if model is None or model.kind != 0:
            raise StreamError("stream is entropy coded with a learned model but none was supplied")
    if flags & FLAG_NO_IMPORTANCE:
        if stream.imp_payload:
            raise BitCountMismatch("importance payload present although the importance map is disabled")
        imp_q = np.zeros((h, w), dtype=np.int64)
        mask = np.ones((n, h, w), dtype=np.uint8)
    else:
        if flags & FLAG_IMP_CODED:
            imp_q = payload.decode_importance(stream.imp_payload, model, h, w, L)
        else:
            imp_q = payload.unraw_importance(stream.imp_payload, h, w, L)
        mask = quant.build_mask(imp_q, n, L)
    if flags & FLAG_CODES_CODED:
        codes = payload.decode_codes(stream.code_payload, mask, model)
    else:
        codes = payload.unraw_codes(stream.code_payload, mask)
    return CodeBundle(codes, np.asarray(imp_q, dtype=np.int64), mask, n, L)


def synthesize(bundle: CodeBundle, params: ModelParams, width: int, height: int) -> RawImage:
    c = Tensor(bundle.codes[None].astype(np.float64))
    x_hat = nets.decode(c, params, clamp=True).data[0]
    return RawImage.from_unit(x_hat[:, :height, :width])


def decompress(stream, params: ModelParams, entropy_model: EntropyModel | None) -> RawImage:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        stream = CompressedStream.from_bytes(bytes(stream))
    if stream.model_crc != params.checksum():
        raise ModelMismatch(f"stream was made with model CRC {stream.model_crc:#010x}, "
                            f"loaded model has {params.checksum():#010x}")
    if stream.n != params.n or stream.L != params.L:
        raise ModelMismatch(f"stream has n={stream.n} L={stream.L}, model n={params.n} L={params.L}")
    bundle = decode_bundle(stream, entropy_model)
    return synthesize(bundle, params, stream.width, stream.height)


def stream_bpp(stream: CompressedStream) -> float:
    return 8.0 * len(stream) / (stream.width * stream.height)


def payload_bpp(stream: CompressedStream) -> float:
    return 8.0 * (len(stream.imp_payload) + len(stream.code_payload)) / (stream.width * stream.height)
