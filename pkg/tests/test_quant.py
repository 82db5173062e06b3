import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cwic import quant
from cwic import tensor as T
from cwic.tensor import Tape, Tensor
from gradcheck import binarize_ste_exact, mask_backward_grid
from oracles import mask_oracle, quantize_oracle


def test_binarize_values():
    assert quant.binarize_values(np.array([0.3, 0.7, 0.5])).tolist() == [0, 1, 0]


def test_binarize_ste_passes_upstream_gradient():
    assert all(binarize_ste_exact(s) for s in range(5))


def test_binarize_ste_zero_outside_unit_interval():
    e = Tensor(np.array([-0.5, 1.5, 0.0, 1.0]), requires_grad=True)
    with Tape() as tape:
        y = T.sum(quant.binarize(e))
    tape.backward(y)
    assert e.grad.tolist() == [0.0, 0.0, 1.0, 1.0]


@pytest.mark.parametrize("p,L,q", [(0.03, 16, 0), (0.5, 16, 8), (0.99, 16, 15), (0.0625, 16, 1),
                                   (0.999, 32, 31), (1 / 3, 32, 10)])
def test_quantize_examples(p, L, q):
    assert quant.quantize_importance(p, L) == q == quantize_oracle(p, L)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.2])
def test_quantize_rejects_outside_open_interval(p):
    with pytest.raises(ValueError):
        quant.quantize_importance(p, 16)


@given(st.floats(min_value=1e-9, max_value=1 - 1e-9), st.sampled_from([16, 32]))
def test_quantize_property(p, L):
    assert quant.quantize_importance(p, L) == quantize_oracle(p, L)


def test_quantize_on_bin_edges():
    for L in (16, 32):
        edges = np.arange(1, L) / L
        np.testing.assert_array_equal(quant.quantize_importance(edges, L), np.arange(1, L))


def test_build_mask_examples():
    m = quant.build_mask(np.array([[0, 1], [15, 8]]), 64, 16)
    assert m.shape == (64, 2, 2)
    assert m[:, 0, 0].sum() == 0
    assert m[:, 0, 1].tolist() == mask_oracle(1, 64, 16)
    assert m[:, 1, 0].sum() == 60
    assert m[:, 1, 1].sum() == 32


def test_build_mask_rejects_bad_levels():
    with pytest.raises(ValueError):
        quant.build_mask(np.array([16]), 64, 16)
    with pytest.raises(ValueError):
        quant.build_mask(np.array([1]), 64, 12)


@given(st.lists(st.integers(0, 31), min_size=1, max_size=30), st.sampled_from([(64, 16), (128, 32)]))
def test_bit_count_identity(levels, nl):
    n, L = nl
    q = np.array([v % L for v in levels])
    assert quant.build_mask(q, n, L).sum() == (n // L) * q.sum()


def test_mask_backward_exhaustive_grid():
    bad, total = mask_backward_grid()
    assert total == 64_000 and bad == 0


def test_mask_backward_examples():
    # k=1 -> ceil(1*16/64) = 1; window 16p-1 <= 1 < 16p+2
    assert quant.mask_backward(0.05, 1, 64, 16) == 16.0
    assert quant.mask_backward(0.2, 1, 64, 16) == 0.0
    assert quant.mask_backward(0.01, 64, 64, 16) == 0.0


def test_importance_mask_forward_and_gradient():
    p = Tensor(np.full((1, 1, 1, 1), 0.3), requires_grad=True)
    with Tape() as tape:
        m = quant.importance_mask(p, 64, 16)
        s = T.sum(m)
    assert m.data.sum() == 4 * 4  # Q(0.3) = 4
    tape.backward(s)
    ks = np.arange(1, 65)
    assert p.grad[0, 0, 0, 0] == pytest.approx(sum(quant.mask_backward(0.3, ks, 64, 16)))


def test_importance_mask_handles_saturated_sigmoid():
    p = Tensor(np.array([1.0, 0.0]).reshape(1, 1, 1, 2))
    m = quant.importance_mask(p, 64, 16).data
    assert m[0, :, 0, 0].sum() == 60 and m[0, :, 0, 1].sum() == 0


def test_trim_arrays_and_tensors(rng):
    codes = rng.integers(0, 2, (4, 3, 3)).astype(np.uint8)
    mask = rng.integers(0, 2, (4, 3, 3)).astype(np.uint8)
    np.testing.assert_array_equal(quant.trim(codes, mask), codes & mask)
    t = quant.trim(Tensor(codes), Tensor(mask))
    np.testing.assert_array_equal(t.data, codes * mask)
    with pytest.raises(ValueError):
        quant.trim(codes, mask[:2])


def test_make_bundle(rng):
    e = rng.uniform(0, 1, (64, 3, 3))
    p = rng.uniform(0.01, 0.99, (3, 3))
    b = quant.make_bundle(e, p, 64, 16)
    assert b.bit_count == 4 * b.imp_q.sum()
    assert not np.any(b.codes & (1 - b.mask))
    off = quant.make_bundle(e, None, 64, 16, importance_enabled=False)
    assert off.bit_count == 64 * 9 and not off.imp_q.any()
