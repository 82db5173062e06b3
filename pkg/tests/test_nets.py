import numpy as np
import pytest

from cwic import nets, quant
from cwic import tensor as T
from cwic.nets import ModelFormatError
from cwic.tensor import ShapeError, Tape, Tensor


def test_layer_table_shapes():
    table = dict(nets.layer_table(64))
    assert table["enc.conv1"] == (128, 3, 8, 8)
    assert table["enc.conv2"] == (256, 128, 4, 4)
    assert table["enc.conv3"] == (64, 256, 1, 1)
    assert table["imp.conv3"] == (1, 128, 1, 1)
    assert table["dec.conv1"] == (512, 64, 1, 1)
    assert table["dec.conv2"] == (256, 128, 3, 3)
    assert table["dec.conv3"] == (32, 16, 3, 3)
    assert table["dec.conv4"] == (3, 32, 3, 3)
    assert dict(nets.layer_table(128))["dec.conv1"] == (512, 128, 1, 1)


def test_forward_shapes_128(random_model):
    x = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 128, 128)))
    e, f = nets.encode(x, random_model)
    assert e.shape == (1, 64, 16, 16) and f.shape == (1, 256, 16, 16)
    p = nets.importance(f, random_model)
    assert p.shape == (1, 1, 16, 16)
    assert np.all((e.data > 0) & (e.data < 1)) and np.all((p.data > 0) & (p.data < 1))
    out = nets.decode(Tensor(quant.binarize_values(e.data).astype(float)), random_model)
    assert out.shape == (1, 3, 128, 128)


def test_decode_clamp(random_model):
    c = Tensor(np.ones((1, 64, 2, 2)))
    out = nets.decode(c, random_model, clamp=True).data
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_encode_rejects_non_multiple_of_8(random_model):
    with pytest.raises(ShapeError):
        nets.encode(Tensor(np.zeros((1, 3, 12, 16))), random_model)
    with pytest.raises(ShapeError):
        nets.decode(Tensor(np.zeros((1, 32, 2, 2))), random_model)


def test_init_is_deterministic_and_float32_exact():
    a, b = nets.init_params(5), nets.init_params(5)
    assert a.checksum() == b.checksum()
    assert a.checksum() != nets.init_params(6).checksum()
    w = a["enc.conv1.w"].data
    np.testing.assert_array_equal(w, w.astype(np.float32))
    assert np.abs(w).max() <= 1 / np.sqrt(3 * 64)


def test_model_roundtrip(tmp_path, random_model):
    path = tmp_path / "m.cwcm"
    nets.save_model(random_model, path)
    back = nets.load_model(path)
    assert back.n == 64 and back.L == 16 and back.importance_enabled
    for name in random_model.names():
        np.testing.assert_array_equal(back[name].data, random_model[name].data)
    assert back.checksum() == random_model.checksum()


def test_model_flag_roundtrip():
    m = nets.zero_params(128)
    m.importance_enabled = False
    back = nets.deserialize(nets.serialize(m))
    assert back.n == 128 and back.L == 32 and not back.importance_enabled


def test_model_format_errors(random_model):
    buf = nets.serialize(random_model)
    with pytest.raises(ModelFormatError, match="CWCM"):
        nets.deserialize(b"XXXX" + buf[4:])
    with pytest.raises(ModelFormatError, match="truncated"):
        nets.deserialize(buf[:-3])
    with pytest.raises(ModelFormatError, match="trailing"):
        nets.deserialize(buf + b"\0")
    with pytest.raises(ModelFormatError, match="version"):
        nets.deserialize(buf[:4] + b"\x09" + buf[5:])
    with pytest.raises(ModelFormatError):
        nets.deserialize(buf[:5] + bytes([64, 12]) + buf[7:])


def test_invalid_levels_rejected():
    with pytest.raises(ValueError):
        nets.ModelParams(64, 32)
    with pytest.raises(ValueError):
        nets.init_params(0, 96)


def test_every_layer_receives_gradient():
    # straight-through paths keep encoder and importance net trainable
    from cwic import train

    params = nets.init_params(3)
    x = Tensor(np.random.default_rng(2).uniform(size=(1, 3, 16, 16)))
    with Tape() as tape:
        res = train.forward(x, params, gamma=1.0, r=0.0)
    tape.backward(res.objective)
    for name, t in params.tensors.items():
        if name.endswith(".w"):
            assert np.abs(t.grad).max() > 0, name


def test_residual_block_identity_when_weights_zero():
    params = nets.zero_params(64)
    x = Tensor(np.abs(np.random.default_rng(0).normal(size=(1, 128, 4, 4))))
    np.testing.assert_array_equal(nets.residual_block(x, params, "enc.res1").data, x.data)
