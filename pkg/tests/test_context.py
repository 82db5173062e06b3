import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from cwic.entropy import context as ctx
from cwic.entropy.models import FreqTable, NetPredictor
from oracles import context_oracle, schedule_oracle
from symmetry import simulate_symmetry


def random_volume(rng, n, h, w, density=0.6):
    codes = rng.integers(0, 2, (n, h, w)).astype(np.uint8)
    mask = (rng.random((n, h, w)) < density).astype(np.uint8)
    return codes * mask, mask


def test_schedule_examples():
    ones = np.ones((2, 2, 2), np.uint8)
    sched = ctx.schedule(ones, ones)
    assert len(sched) == 8 and tuple(sched[0]) == (0, 0, 0) and tuple(sched[4]) == (1, 0, 0)
    assert len(ctx.schedule(ones, np.zeros_like(ones))) == 0


def test_schedule_mixed_mask(rng):
    codes, mask = random_volume(rng, 5, 4, 3)
    sched = ctx.schedule(codes, mask)
    assert len(sched) == mask.sum()
    assert [tuple(p) for p in sched] == schedule_oracle(mask)


def test_first_position_has_empty_context():
    ones = np.ones((2, 3, 3), np.uint8)
    assert not ctx.extract_context(ones, ones, 0, 0, 0).any()


def test_context_of_second_map_sees_first_map():
    codes = np.zeros((2, 1, 1), np.uint8)
    codes[0, 0, 0] = 1
    ones = np.ones_like(codes)
    cub = ctx.extract_context(codes, ones, 1, 0, 0)
    assert cub[2, 2, 2] == 2 and cub[3, 2, 2] == 0 and cub.sum() == 2


def test_masked_neighbour_is_unavailable():
    codes = np.ones((1, 1, 2), np.uint8)
    mask = np.array([[[0, 1]]], np.uint8)
    cub = ctx.extract_context(codes * mask, mask, 0, 0, 1)
    assert cub[3, 2, 1] == 0


def test_recoding_values():
    codes = np.array([[[0, 1, 0]]], np.uint8)
    ones = np.ones_like(codes)
    cub = ctx.extract_context(codes, ones, 0, 0, 2)
    assert cub[3, 2, 0] == 1 and cub[3, 2, 1] == 2 and cub[3, 2, 2] == 0


@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_extract_context_matches_oracle(n, h, w, seed):
    rng = np.random.default_rng(seed)
    codes, mask = random_volume(rng, n, h, w)
    for k, i, j in ctx.schedule(codes, mask):
        np.testing.assert_array_equal(ctx.extract_context(codes, mask, k, i, j),
                                      context_oracle(codes, mask, k, i, j))


def test_all_contexts_matches_single(rng):
    codes, mask = random_volume(rng, 6, 5, 7)
    batch = ctx.all_contexts(codes, mask)
    for row, (k, i, j) in zip(batch, ctx.schedule(codes, mask)):
        np.testing.assert_array_equal(row.reshape(4, 5, 5), ctx.extract_context(codes, mask, k, i, j))


def test_one_hot_layout():
    cub = np.zeros((1, 100), np.uint8)
    cub[0, 5] = 2
    oh = ctx.one_hot(cub)
    assert oh.shape == (1, 300) and oh.sum() == 100 and oh[0, 5 * 3 + 2] == 1


def test_context_symmetry_net_and_table(rng):
    for seed in range(10):
        codes, mask = random_volume(rng, *rng.integers(1, 9, 3))
        assert simulate_symmetry(codes, mask, NetPredictor.random(seed))
        assert simulate_symmetry(codes, mask, FreqTable())
