import numpy as np
import pytest

from cwic import container, nets, train
from cwic import tensor as T
from cwic.tensor import Tape, Tensor
from cwic.train import AdamState, Plateau, TrainConfig


def test_distortion_examples():
    x = Tensor(np.zeros((3, 2, 2)))
    assert float(train.distortion_loss(x, x).data) == 0.0
    assert float(train.distortion_loss(Tensor(np.full((3, 2, 2), 0.1)), x).data) == pytest.approx(0.12)


def test_distortion_gradient():
    xh = Tensor(np.array([0.5, -1.0]), requires_grad=True)
    with Tape() as tape:
        d = train.distortion_loss(xh, Tensor(np.array([0.0, 1.0])))
    tape.backward(d)
    np.testing.assert_allclose(xh.grad, [1.0, -4.0])


def _uniform_map(total, side=10):
    return Tensor(np.full((1, 1, side, side), total / side ** 2), requires_grad=True)


def test_rate_loss_examples():
    assert float(train.rate_loss(_uniform_map(100.0), 120.0).data) == pytest.approx(0.0)
    assert float(train.rate_loss(_uniform_map(150.0, 20), 120.0).data) == pytest.approx(30.0)
    p = _uniform_map(37.0)
    assert float(train.rate_loss(p, 0.0).data) == pytest.approx(37.0)


def test_rate_loss_gradient_branches():
    for total, expect in ((150.0, 1.0), (100.0, 0.0)):
        p = _uniform_map(total, 20)
        with Tape() as tape:
            r = train.rate_loss(p, 120.0)
        tape.backward(r)
        assert np.all(p.grad == expect)


def test_rate_loss_per_image_hinge():
    p = Tensor(np.stack([np.full((1, 2, 2), 0.9), np.full((1, 2, 2), 0.1)]))
    # image sums 3.6 and 0.4 against r = 1: only the first is penalized
    assert float(train.rate_loss(p, 1.0).data) == pytest.approx(2.6)


def test_threshold_rule():
    assert TrainConfig(r0=0.5, n=64).threshold(16, 16) == 128.0
    assert TrainConfig(r0=0.5, n=128).threshold(16, 16) == 64.0
    assert TrainConfig(rate_threshold=7.0).threshold(16, 16) == 7.0
    assert TrainConfig().L == 16 and TrainConfig(n=128).L == 32


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=-1)
    with pytest.raises(ValueError):
        TrainConfig(n=32)


def test_config_text_roundtrip():
    cfg = TrainConfig(gamma=0.05, r0=0.3, n=128, seed=9, importance_map_enabled=False,
                      lr_ladder=(1e-3, 1e-4))
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    parsed = TrainConfig.from_text("# comment\ngamma = 0.2  # inline\n\nbatch_size = 2\n")
    assert parsed.gamma == 0.2 and parsed.batch_size == 2
    with pytest.raises(ValueError, match="unknown key"):
        TrainConfig.from_text("speed = 3")


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    train.adam_step(params, {"w": np.zeros(2)}, state, 1e-3)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_is_lr():
    params = {"w": np.array([1.0])}
    train.adam_step(params, {"w": np.array([1.0])}, AdamState(), 0.01)
    # m_hat = v_hat = 1 -> step = lr * 1 / (1 + eps)
    assert params["w"][0] == pytest.approx(1.0 - 0.01, abs=1e-9)


def test_adam_matches_reference_recurrence(rng):
    w0 = rng.normal(size=5)
    params = {"w": w0.copy()}
    state = AdamState()
    m = v = np.zeros(5)
    w = w0.copy()
    for t in range(1, 6):
        g = rng.normal(size=5)
        train.adam_step(params, {"w": g}, state, 1e-3)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["w"], w, rtol=1e-12)


def test_plateau_patience():
    p = Plateau(2)
    assert [p.update(v) for v in (10, 9, 9, 9)] == [False, False, False, True]


def test_ladder_visits_three_stages():
    seen = []

    def step(lr):
        seen.append(lr)
        return 1.0  # never improves

    train.run_ladder(step, train.LR_LADDER, max_iters=1000, window=5, patience=3)
    assert sorted(set(seen), reverse=True) == [1e-4, 1e-5, 1e-6]
    assert len(seen) == 3 * 20  # first check sets the best, then 3 bad checks


def test_ladder_total_cap():
    hist = train.run_ladder(lambda lr: 1.0, (1e-4, 1e-5), max_iters=100, window=1000, patience=3,
                            total_iters=130)
    assert len(hist) == 130


def test_objective_gamma_zero_is_distortion():
    params = nets.init_params(1)
    x = train.synthetic_patches(1, 16, 0)
    res = train.forward(Tensor(x), params, 0.0, 0.0)
    assert float(res.objective.data) == float(res.distortion.data) > 0
    cfg = TrainConfig(gamma=0.5, rate_threshold=0.0)
    full = train.objective(x, params, cfg)
    assert full == pytest.approx(float(res.distortion.data) + 0.5 * float(res.rate.data))


def test_importance_disabled_keeps_every_bit():
    params = nets.init_params(1)
    params.importance_enabled = False
    x = train.synthetic_patches(1, 16, 0)
    res = train.forward(Tensor(x), params, 1.0, 0.0, importance_enabled=False)
    assert res.p is None and float(res.rate.data) == 0.0
    b = container.analyze(container.RawImage.from_unit(x[0]), params)
    assert b.bit_count == 64 * 2 * 2


def test_training_is_deterministic_and_decreases():
    x = train.synthetic_patches(2, 16, 3)
    cfg = TrainConfig(batch_size=2, total_iters=12, max_iters=12, window=1000, seed=4)
    a = train.train(cfg, x)
    b = train.train(cfg, x)
    assert a.checksum() == b.checksum()
    start = nets.init_params(4)
    assert train.objective(x, a, cfg) < train.objective(x, start, cfg)


def test_warm_start_and_rejections():
    x = train.synthetic_patches(1, 16, 0)
    cfg = TrainConfig(total_iters=1, max_iters=1, importance_map_enabled=False)
    warm = train.train(cfg, x, nets.init_params(2))
    assert not warm.importance_enabled
    with pytest.raises(ValueError):
        train.train(cfg, np.zeros((0, 3, 16, 16)))
    with pytest.raises(ValueError):
        train.train(TrainConfig(n=128, total_iters=1), x, nets.init_params(2))


def test_load_patches(tmp_path):
    rng = np.random.default_rng(0)
    big = container.RawImage(rng.integers(0, 256, (256, 256, 3)))
    small = container.RawImage(rng.integers(0, 256, (100, 100, 3)))
    container.write_ppm(big, tmp_path / "a.ppm")
    container.write_ppm(small, tmp_path / "b.ppm")
    patches = train.load_patches(tmp_path, 128, seed=1)
    assert patches.shape == (4, 3, 128, 128)
    assert patches.min() >= 0 and patches.max() <= 1
    np.testing.assert_array_equal(patches, train.load_patches(tmp_path, 128, seed=1))
    tiles = {tuple(p[:, 0, 0]) for p in patches}
    corners = {tuple(big.pixels[y, x] / 255.0) for y in (0, 128) for x in (0, 128)}
    assert tiles == corners


def test_synthetic_patches_range():
    p = train.synthetic_patches(3, 32, 0)
    assert p.shape == (3, 3, 32, 32) and p.min() >= 0 and p.max() <= 1
