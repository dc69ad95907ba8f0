import numpy as np
import pytest

from pltmap.errors import CheckpointError, ShapeError
from pltmap.nn.checkpoint import (
    dump_checkpoint,
    infer,
    infer_array,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from pltmap.nn.unet import Architecture, UNetModel, backward, forward, param_specs, predict

from test_layers import numeric_grad, scaled_error

MINI = Architecture(channels=(2, 4, 8), bottleneck=8, input_length=64)


@pytest.fixture(scope="module")
def mini64():
    model = UNetModel.initialize(MINI, seed=5, dtype=np.float64)
    # nonzero biases keep pre-activations off the ReLU kink at exactly 0
    bias_rng = np.random.default_rng(6)
    for k, v in model.params.items():
        if k.endswith(".b"):
            v[:] = bias_rng.uniform(0.05, 0.15, v.shape)
    return model


def test_default_plan_and_shapes():
    arch = Architecture()
    names = [n for n, _ in param_specs(arch)]
    assert names[0] == "enc0.conv1.w" and names[-2:] == ["head.w", "head.b"]
    assert len(names) == len(set(names))
    assert arch.reduction == 4 ** arch.depth and 4096 % arch.reduction == 0
    assert arch.receptive_field() >= 4096
    assert Architecture(channels=(16, 32, 64)).receptive_field() == 488


def test_receptive_field_matches_impulse_response():
    # perturb one input sample and see how far the output changes
    arch = Architecture(channels=(2, 2), bottleneck=2, input_length=256, dropout=0.0)
    model = UNetModel.initialize(arch, 1, np.float64)
    for k in model.params:
        if k.endswith(".w"):
            model.params[k] = np.abs(model.params[k]) * 0.3
        else:
            model.params[k][:] = 0.1
    x = np.zeros((1, 1, 256))
    base, _ = forward(model, x)
    x[0, 0, 128] = 1.0
    hit, _ = forward(model, x)
    changed = np.flatnonzero(np.abs(hit - base)[0, 0] > 0)
    assert changed.max() - changed.min() + 1 <= arch.receptive_field()


def test_mini_unet_gradcheck(mini64, rng):
    model = mini64.copy()
    x = rng.standard_normal((2, 1, 64))
    r = rng.standard_normal((2, 1, 64))

    def loss():
        return float(np.sum(forward(model, x, "infer")[0] * r))

    y, caches = forward(model, x, "infer")
    grads = backward(model, r, caches)
    worst = {name: scaled_error(grads[name], numeric_grad(loss, p))
             for name, p in model.params.items()}
    worst["input"] = scaled_error(grads["input"], numeric_grad(loss, x))
    assert max(worst.values()) < 1e-5, worst


def test_train_mode_gradient_matches_frozen_masks(mini64, rng):
    # with the dropout mask and noise held fixed the train path is differentiable too
    model = mini64.copy()
    x = rng.standard_normal((1, 1, 64))
    r = rng.standard_normal((1, 1, 64))
    seed = 11

    def loss():
        return float(np.sum(forward(model, x, "train", np.random.default_rng(seed))[0] * r))

    _, caches = forward(model, x, "train", np.random.default_rng(seed))
    grads = backward(model, r, caches)
    p = model.params["enc1.conv2.w"]
    assert scaled_error(grads["enc1.conv2.w"], numeric_grad(loss, p)) < 1e-5


def test_zero_weights_give_half():
    model = UNetModel.initialize(Architecture())
    for v in model.params.values():
        v[:] = 0
    y, _ = forward(model, np.random.default_rng(0).standard_normal((1, 1, 4096)).astype(np.float32))
    assert y.shape == (1, 1, 4096) and np.all(y == 0.5)


def test_infer_is_deterministic_and_in_range(rng):
    model = UNetModel.initialize(Architecture(), seed=3)
    x = rng.standard_normal((2, 1, 4096)).astype(np.float32)
    a, _ = forward(model, x)
    b, _ = forward(model, x)
    np.testing.assert_array_equal(a, b)
    assert a.min() > 0 and a.max() < 1


def test_output_strictly_inside_unit_interval_for_large_weights(rng):
    # saturating logits in both directions still give values inside (0, 1)
    model = UNetModel.initialize(MINI, seed=2)
    for v in model.params.values():
        v *= 20
    for sign in (1, -1):
        model.params["head.b"][:] = sign * 1e6
        y, _ = forward(model, rng.standard_normal((3, 1, 64)).astype(np.float32) * 100)
        assert np.isfinite(y).all() and y.min() > 0 and y.max() < 1


def test_shape_errors(mini64):
    with pytest.raises(ShapeError):
        forward(mini64, np.zeros((1, 2, 64)))
    with pytest.raises(ShapeError):
        forward(mini64, np.zeros((1, 1, 60)))
    with pytest.raises(ShapeError):
        Architecture(input_length=1000)


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    model = UNetModel.initialize(MINI, seed=9)
    path = tmp_path / "m.pltn"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.arch == model.arch
    for k in model.params:
        np.testing.assert_array_equal(back.params[k], model.params[k])
    x = rng.standard_normal((4, 64)).astype(np.float32)
    np.testing.assert_array_equal(infer_array(back, x), infer_array(model, x))
    assert dump_checkpoint(back) == path.read_bytes()


def test_checkpoint_corruption_and_version(tmp_path):
    data = bytearray(dump_checkpoint(UNetModel.initialize(MINI)))
    bad = bytearray(data)
    bad[-100] ^= 1
    with pytest.raises(CheckpointError):
        parse_checkpoint(bytes(bad))
    old = bytearray(data)
    old[4] = 99
    with pytest.raises(CheckpointError, match="version"):
        parse_checkpoint(bytes(old))
    with pytest.raises(CheckpointError):
        parse_checkpoint(b"NOPE" + bytes(data[4:]))


def test_windowed_inference(rng):
    model = UNetModel.initialize(Architecture(), seed=1)
    x = rng.standard_normal(8192).astype(np.float32)
    y = infer_array(model, x)
    assert y.shape == (8192,)
    np.testing.assert_array_equal(y[:4096], infer_array(model, x[:4096]))
    np.testing.assert_array_equal(y[4096:], infer_array(model, x[4096:]))
    with pytest.raises(ShapeError, match="multiple of 4096"):
        infer_array(model, np.zeros(5000, dtype=np.float32))
    sig = infer(model, x[:4096])
    assert len(sig) == 4096 and sig.sample_rate == 1000.0


def test_predict_batches_agree(rng):
    model = UNetModel.initialize(MINI, seed=4)
    x = rng.standard_normal((7, 64)).astype(np.float32)
    np.testing.assert_array_equal(predict(model, x, 2), predict(model, x, 7))
