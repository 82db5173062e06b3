import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cwic.entropy import coder
from cwic.errors import TruncatedStream


def test_uniform_bits_cost_one_bit_each(rng):
    bits = rng.integers(0, 2, 1000)
    data = coder.ac_encode(bits, np.full(1000, 0.5))
    assert 125 <= len(data) <= 125 + 8
    np.testing.assert_array_equal(coder.ac_decode(data, np.full(1000, 0.5)), bits)


def test_skewed_bits_near_cross_entropy():
    bits = np.ones(1000, dtype=np.uint8)
    data = coder.ac_encode(bits, np.full(1000, 0.99))
    ideal = 1000 * -math.log2(0.99)  # about 14.5 bits
    assert 8 * len(data) <= ideal + 64
    np.testing.assert_array_equal(coder.ac_decode(data, np.full(1000, 0.99)), bits)


def test_empty_input():
    data = coder.ac_encode([], [])
    assert len(data) <= 8
    assert coder.ac_decode(data, np.zeros(0)).size == 0


def test_truncated_stream_rejected(rng):
    bits = rng.integers(0, 2, 400)
    probs = rng.uniform(0.2, 0.8, 400)
    data = coder.ac_encode(bits, probs)
    with pytest.raises(TruncatedStream):
        coder.ac_decode(data[: len(data) // 2], probs)


def test_decoder_reports_consumed_bytes(rng):
    bits = rng.integers(0, 2, 300)
    probs = rng.uniform(0.05, 0.95, 300)
    data = coder.ac_encode(bits, probs)
    out, used = coder.ac_decode(data + b"\x00\x00", probs, return_consumed=True)
    np.testing.assert_array_equal(out, bits)
    assert used == len(data)


def test_callback_probabilities(rng):
    bits = rng.integers(0, 2, 200)
    # adaptive model: probability depends on the previously decoded bits
    def model(i, prev):
        return 0.8 if i and prev[i - 1] else 0.3
    probs = [0.3] + [0.8 if b else 0.3 for b in bits[:-1]]
    data = coder.ac_encode(bits, probs)
    np.testing.assert_array_equal(coder.ac_decode(data, model, count=200), bits)


def test_extreme_probabilities_are_clamped():
    bits = np.array([0, 1, 0, 1], dtype=np.uint8)
    probs = np.array([1.0, 0.0, 1.0, 0.0])  # every bit is maximally surprising
    data = coder.ac_encode(bits, probs)
    np.testing.assert_array_equal(coder.ac_decode(data, probs), bits)
    assert coder.clamp_prob(0.0) == pytest.approx(1e-4)


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(1e-4, 1 - 1e-4)), max_size=300))
def test_roundtrip_property(pairs):
    bits = np.array([b for b, _ in pairs], dtype=np.uint8)
    probs = np.array([p for _, p in pairs])
    data = coder.ac_encode(bits, probs)
    np.testing.assert_array_equal(coder.ac_decode(data, probs), bits)
    assert 8 * len(data) <= coder.ideal_bits(bits, probs) + 64


def test_ideal_bits():
    assert coder.ideal_bits([1, 0], [0.5, 0.5]) == pytest.approx(2.0)
