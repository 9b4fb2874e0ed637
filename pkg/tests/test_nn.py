import dataclasses
import struct

import numpy as np
import pytest

from advpipe import nn
from advpipe.errors import DimensionMismatch, TargetLengthMismatch, UnknownSymbol

PARAM_NAMES = [f.name for f in dataclasses.fields(nn.NetworkParams)]


def fd_loss(params, x, target, i, h=1e-5):
    """Central finite difference of the loss w.r.t. input coordinate i."""
    xp = x.copy()
    xp.flat[i] += h
    up = nn.loss_and_input_grad(params, xp, target).value
    xp.flat[i] -= 2 * h
    um = nn.loss_and_input_grad(params, xp, target).value
    return (up - um) / (2 * h)


def fd_param(params, x, target, name, i, h=1e-5):
    """Central finite difference of the loss w.r.t. one parameter entry."""
    def at(value):
        t = getattr(params, name).copy()
        t.flat[i] = value
        p = nn.NetworkParams(**{n: (t if n == name else getattr(params, n))
                                for n in PARAM_NAMES})
        return nn.loss_and_input_grad(p, x, target).value

    v0 = getattr(params, name).flat[i]
    return (at(v0 + h) - at(v0 - h)) / (2 * h)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def test_zero_params_zero_logits():
    params = nn.zero_params()
    crop = np.random.default_rng(0).uniform(0, 1, (28, 120))
    logits = nn.forward(params, crop)
    assert logits.shape == (6, 11)
    assert np.all(logits == 0.0)


def test_forward_deterministic():
    params = nn.init_params(3)
    crop = np.random.default_rng(1).uniform(0, 1, (28, 120))
    a = nn.forward(params, crop)
    b = nn.forward(params, crop)
    assert np.array_equal(a, b)


def test_forward_rejects_wrong_shape():
    with pytest.raises(DimensionMismatch):
        nn.forward(nn.zero_params(), np.zeros((28, 119)))


def test_label_validation():
    with pytest.raises(TargetLengthMismatch):
        nn.label_to_indices("123")
    with pytest.raises(UnknownSymbol):
        nn.label_to_indices("12x.45")


def test_loss_zero_at_saturated_prediction():
    # head bias forces a huge logit on the target class of every cell
    params = nn.zero_params()
    bias = np.full(11, -40.0)
    bias[0] = 40.0
    params = nn.NetworkParams(**{n: (bias if n == "head_b" else getattr(params, n))
                                 for n in PARAM_NAMES})
    crop = np.zeros((28, 120))
    gp = nn.loss_and_input_grad(params, crop, "000000")
    assert gp.value == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(gp.input_grad)) < 1e-12


def test_loss_nonnegative_and_grad_shape(rng):
    params = nn.init_params(11)
    crop = rng.uniform(0, 1, (28, 120))
    gp = nn.loss_and_input_grad(params, crop, "98.210")
    assert gp.value >= 0.0
    assert gp.input_grad.shape == crop.shape


def test_input_grad_matches_finite_differences(rng):
    params = nn.init_params(5)
    x = rng.uniform(0, 1, (28, 120))
    target = "304.57"
    g = nn.loss_and_input_grad(params, x, target).input_grad
    for i in rng.choice(x.size, size=25, replace=False):
        assert rel_err(g.flat[i], fd_loss(params, x, target, i)) <= 1e-4


def test_doubling_loss_doubles_gradient(rng):
    # summing the loss twice is the same as scaling gradients by two
    params = nn.init_params(6)
    x = rng.uniform(0, 1, (28, 120))
    g = nn.loss_and_input_grad(params, x, "111111").input_grad
    assert np.allclose(2.0 * g, g + g, rtol=0, atol=0)


def test_param_grad_matches_finite_differences(rng):
    params = nn.init_params(8)
    x = rng.uniform(0, 1, (28, 120))
    target = "88.201"
    grads = nn.param_grad(params, x, target)
    for _ in range(20):
        name = PARAM_NAMES[rng.integers(0, len(PARAM_NAMES))]
        i = int(rng.integers(0, getattr(params, name).size))
        an = getattr(grads, name).flat[i]
        assert rel_err(an, fd_param(params, x, target, name, i)) <= 1e-4


def test_param_grad_shapes_mirror_params(rng):
    params = nn.init_params(9)
    grads = nn.param_grad(params, rng.uniform(0, 1, (28, 120)), "012.34")
    for name in PARAM_NAMES:
        assert getattr(grads, name).shape == getattr(params, name).shape


def test_zero_crop_zero_bias_first_layer_weight_grads():
    # chain rule: conv1 weight grads multiply the (all-zero) input
    params = nn.init_params(12)
    grads = nn.param_grad(params, np.zeros((28, 120)), "55.555")
    assert np.all(grads.conv1_w == 0.0)


def test_sgd_zero_lr_is_identity(rng):
    params = nn.init_params(2)
    grads = nn.param_grad(params, rng.uniform(0, 1, (28, 120)), "777.77")
    stepped = nn.sgd_step(params, grads, 0.0)
    for name in PARAM_NAMES:
        assert np.array_equal(getattr(stepped, name), getattr(params, name))


def test_sgd_arithmetic():
    params = nn.zero_params()
    ones = nn.NetworkParams(**{n: np.full_like(getattr(params, n), 2.0)
                               for n in PARAM_NAMES})
    base = nn.NetworkParams(**{n: np.full_like(getattr(params, n), 1.0)
                               for n in PARAM_NAMES})
    stepped = nn.sgd_step(base, ones, 0.1)
    assert np.allclose(stepped.head_w, 0.8)


def test_sgd_two_steps_sum(rng):
    params = nn.init_params(4)
    g = nn.param_grad(params, rng.uniform(0, 1, (28, 120)), "31.415")
    twice = nn.sgd_step(nn.sgd_step(params, g, 0.05), g, 0.05)
    once = nn.sgd_step(params, g, 0.1)
    for name in PARAM_NAMES:
        assert np.allclose(getattr(twice, name), getattr(once, name),
                           rtol=0, atol=1e-15)


def test_params_immutable():
    params = nn.init_params(1)
    with pytest.raises(ValueError):
        params.conv1_w[0, 0, 0, 0] = 1.0
    src = np.zeros((11,))
    p = nn.NetworkParams(**{n: (src if n == "head_b" else getattr(nn.zero_params(), n))
                            for n in PARAM_NAMES})
    src[0] = 5.0  # caller's array stays independent
    assert p.head_b[0] == 0.0


def test_decode_tie_breaks_low_index():
    logits = np.zeros((6, 11))
    assert nn.decode_logits(logits) == "000000"
    logits[2, 7] = 1.0
    assert nn.decode_logits(logits) == "007000"


def test_serialization_roundtrip(tmp_path):
    params = nn.init_params(17)
    path = tmp_path / "p.kosn"
    nn.save_params(params, path)
    loaded = nn.load_params(path)
    for name in PARAM_NAMES:
        assert np.array_equal(getattr(loaded, name), getattr(params, name))


def test_serialization_wire_format(tmp_path):
    params = nn.init_params(17)
    path = tmp_path / "p.kosn"
    nn.save_params(params, path)
    blob = path.read_bytes()
    assert blob[:4] == b"KOSN"
    assert blob[4] == 1
    dims = []
    for t in params.tensors():
        dims.extend(t.shape)
    header = struct.pack(f"<{len(dims)}I", *dims)
    assert blob[5:5 + len(header)] == header
    payload = b"".join(t.astype("<f8").tobytes() for t in params.tensors())
    assert blob[5 + len(header):] == payload


def test_batch_forward_matches_single(rng):
    params = nn.init_params(23)
    crops = rng.uniform(0, 1, (4, 28, 120))
    batched = nn.forward_batch(params, crops)
    for i in range(4):
        assert np.array_equal(batched[i], nn.forward(params, crops[i]))
