"""Image quality metrics and rate-distortion CSV emission.

All metrics work on the 0-255 sample scale.  SSIM is computed on the
per-pixel mean of the RGB channels.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

DYNAMIC_RANGE = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
CSV_COLUMNS = ("image", "codec", "bpp", "mse", "psnr", "ssim")


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def mse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean((x - y) ** 2))


def psnr(x, y) -> float:
    """10 log10(255^2 / mse); +inf for identical inputs."""
    err = mse(x, y)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE ** 2 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _to_gray(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=2) if x.ndim == 3 else x


def _filter(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # valid-mode weighted local mean
    return np.einsum("ijkl,kl->ij", sliding_window_view(img, win.shape), win)


def ssim(x, y) -> float:
    """Mean local SSIM; inputs (H,W) or (H,W,C), both sides at least 11."""
    x, y = _pair(x, y)
    x, y = _to_gray(x), _to_gray(y)
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    win = gaussian_window()
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mx, my = _filter(x, win), _filter(y, win)
    sxx = _filter(x * x, win) - mx * mx
    syy = _filter(y * y, win) - my * my
    sxy = _filter(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def bpp(file_bytes: int, width: int, height: int) -> float:
    if width <= 0 or height <= 0:
        raise ValueError("bpp needs a non-empty image")
    return 8.0 * file_bytes / (width * height)


def file_bpp(path, width: int, height: int) -> float:
    return bpp(Path(path).stat().st_size, width, height)


@dataclass
class RDPoint:
    image: str
    codec: str
    bpp: float
    mse: float
    psnr: float
    ssim: float

    def row(self) -> list:
        return [self.image, self.codec, repr(self.bpp), repr(self.mse), repr(self.psnr), repr(self.ssim)]

    def line(self) -> str:
        return ",".join(str(v) for v in self.row())


def evaluate(image_id: str, codec: str, orig: np.ndarray, recon: np.ndarray, nbytes: int) -> RDPoint:
    h, w = orig.shape[:2]
    return RDPoint(image_id, codec, bpp(nbytes, w, h), mse(orig, recon), psnr(orig, recon),
                   ssim(orig, recon))


def mean_rows(points: Iterable[RDPoint]) -> list[RDPoint]:
    """One ``MEAN`` row per codec, arithmetic mean of its per-image rows."""
    by_codec: dict[str, list[RDPoint]] = {}
    for p in points:
        if p.image == "MEAN":
            continue
        by_codec.setdefault(p.codec, []).append(p)
    out = []
    for codec in sorted(by_codec):
        rows = by_codec[codec]
        out.append(RDPoint("MEAN", codec, *(float(np.mean([getattr(r, f) for r in rows]))
                                            for f in ("bpp", "mse", "psnr", "ssim"))))
    return out


def read_csv(path) -> list[RDPoint]:
    """External baseline rows with the same columns; ``#`` lines are comments."""
    return parse_csv_text(Path(path).read_text(encoding="utf-8"), str(path))


def write_csv(points: Iterable[RDPoint], out) -> None:
    """Write rows sorted by (image, codec), followed by per-codec means."""
    points = sorted((p for p in points if p.image != "MEAN"), key=lambda p: (p.image, p.codec))
    own = isinstance(out, (str, Path))
    fh = open(out, "w", newline="", encoding="utf-8") if own else out
    try:
        fh.write("# mse on the 0-255 sample scale; psnr in dB; bpp = 8*filesize/pixels\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for p in [*points, *mean_rows(points)]:
            writer.writerow(p.row())
    finally:
        if own:
            fh.close()


def parse_csv_text(text: str, source: str = "<csv>") -> list[RDPoint]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{source}: missing columns {sorted(missing)}")
    return [RDPoint(r["image"], r["codec"], *(float(r[c]) for c in CSV_COLUMNS[2:])) for r in reader]
