import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cwic import metrics as M
from oracles import ssim_constant


def test_identical_images():
    x = np.random.default_rng(0).integers(0, 256, (20, 24, 3))
    assert M.mse(x, x) == 0.0 and M.psnr(x, x) == math.inf
    assert abs(M.ssim(x, x) - 1.0) <= 1e-9


def test_plus_five_offset():
    x = np.random.default_rng(1).integers(0, 250, (16, 16, 3))
    assert M.mse(x, x + 5) == 25.0
    assert M.psnr(x, x + 5) == pytest.approx(20 * math.log10(255 / 5))
    assert abs(M.psnr(x, x + 5) - 34.15) <= 0.01


def test_checkerboard_is_maximal():
    board = (np.indices((8, 8)).sum(0) % 2) * 255
    assert M.mse(board, 255 - board) == 255.0 ** 2
    assert M.psnr(board, 255 - board) == pytest.approx(0.0)


@pytest.mark.parametrize("a,b", [(10, 50), (0, 255), (128, 128), (200, 30)])
def test_constant_image_ssim(a, b):
    x, y = np.full((15, 13), float(a)), np.full((15, 13), float(b))
    assert abs(M.ssim(x, y) - ssim_constant(a, b)) <= 1e-9


def test_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x, y = rng.integers(0, 256, (2, 16, 18, 3))
        s = M.ssim(x, y)
        assert -1 <= s <= 1 and s < 1
        assert s == pytest.approx(M.ssim(y, x), abs=1e-12)


def test_ssim_rejects_small_and_mismatched():
    with pytest.raises(ValueError):
        M.ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        M.mse(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_uses_channel_mean():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 256, (12, 12, 3)).astype(float)
    y = rng.integers(0, 256, (12, 12, 3)).astype(float)
    assert M.ssim(x, y) == pytest.approx(M.ssim(x.mean(2), y.mean(2)))


def test_gaussian_window():
    w = M.gaussian_window()
    assert w.shape == (11, 11) and w.sum() == pytest.approx(1.0) and w[5, 5] == w.max()


@given(st.integers(0, 1000))
def test_psnr_monotone_in_noise(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 256, (12, 12)).astype(float)
    noise = rng.normal(size=x.shape)
    values = [M.psnr(x, x + s * noise) for s in (0.5, 1, 2, 4, 8)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_bpp():
    assert M.bpp(100, 10, 20) == 4.0
    with pytest.raises(ValueError):
        M.bpp(1, 0, 3)


def test_csv_rows_means_and_passthrough(tmp_path):
    pts = [M.RDPoint("b", "cwic", 0.5, 10.0, 38.0, 0.9),
           M.RDPoint("a", "cwic", 1.5, 4.0, 42.0, 0.95),
           M.RDPoint("a", "jpeg", 1.0, 20.0, 35.1, 0.8)]
    base = tmp_path / "ext.csv"
    base.write_text("image,codec,bpp,mse,psnr,ssim\nk1,jpeg2000,0.25,30.5,33.3,0.7\n")
    ext = M.read_csv(base)
    assert ext == [M.RDPoint("k1", "jpeg2000", 0.25, 30.5, 33.3, 0.7)]
    buf = io.StringIO()
    M.write_csv(pts + ext, buf)
    rows = M.parse_csv_text(buf.getvalue())
    assert [(r.image, r.codec) for r in rows[:4]] == [("a", "cwic"), ("a", "jpeg"), ("b", "cwic"),
                                                      ("k1", "jpeg2000")]
    means = {r.codec: r for r in rows if r.image == "MEAN"}
    assert means["cwic"].bpp == 1.0 and means["cwic"].psnr == 40.0
    assert means["jpeg2000"] == M.RDPoint("MEAN", "jpeg2000", 0.25, 30.5, 33.3, 0.7)
    assert buf.getvalue().startswith("#")


def test_csv_missing_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("image,bpp\nx,1\n")
    with pytest.raises(ValueError, match="missing"):
        M.read_csv(p)
