import numpy as np
import pytest

from dmpnn import autodiff as ad
from dmpnn.autodiff import Tensor
from dmpnn.neural import (AdamState, Dense, FeedForwardNet, GruCell, ModelDims, adam_update,
                          dims_of, fnn_forward, gru_step, init_params, load_checkpoint,
                          read_checkpoint, save_checkpoint)


def const(x):
    return Tensor(np.asarray(x, dtype=float))


def zero_cell(s, k, bias=0.0):
    return GruCell(w_z=const(np.zeros((s, s + k))), b_z=const(np.full(s, bias)),
                   w_r=const(np.zeros((s, s + k))), b_r=const(np.zeros(s)),
                   w_h=const(np.zeros((s, s + k))), b_h=const(np.zeros(s)))


def test_init_is_deterministic(tiny_dims):
    a, b = init_params(tiny_dims, 7), init_params(tiny_dims, 7)
    for (k, x), (_, y) in zip(a.arrays().items(), b.arrays().items()):
        np.testing.assert_array_equal(x, y, err_msg=k)


def test_init_biases_are_zero(tiny_dims):
    for name, arr in init_params(tiny_dims, 0).arrays().items():
        if name.endswith(".b") or ".b_" in name:
            assert not arr.any(), name


def test_init_weights_are_centred():
    params = init_params(ModelDims(), 3)
    w = np.concatenate([v.ravel() for k, v in params.arrays().items() if k.endswith("W")])
    assert w.size >= 10_000
    assert abs(w.mean()) <= 3 * w.std() / np.sqrt(w.size)


def test_dims_roundtrip(tiny_dims):
    assert dims_of(init_params(tiny_dims, 0)) == tiny_dims


def test_zero_relu_net_outputs_zero():
    net = FeedForwardNet([Dense(const(np.zeros((2, 3))), const(np.zeros(2)), "relu")])
    np.testing.assert_array_equal(fnn_forward(net, np.ones(3)).data, [0.0, 0.0])


def test_scaled_sigmoid_at_zero():
    net = FeedForwardNet([Dense(const([[1.0]]), const([0.0]), "scaled-sigmoid")], out_scale=10.0)
    assert fnn_forward(net, np.zeros(1)).data[0] == pytest.approx(5.0)


def test_affine_layer():
    net = FeedForwardNet([Dense(const([[2.0]]), const([1.0]), "linear")])
    assert fnn_forward(net, np.array([3.0])).data[0] == 7.0


def test_zero_gru_halves_state():
    v = np.array([1.0, -2.0, 4.0])
    out = gru_step(zero_cell(3, 2), v, np.array([0.5, 0.5]))
    np.testing.assert_allclose(out.data, v / 2)


def test_closed_update_gate_keeps_state():
    v = np.array([1.0, -2.0, 4.0])
    out = gru_step(zero_cell(3, 2, bias=-50.0), v, np.array([3.0, -1.0]))
    np.testing.assert_allclose(out.data, v, atol=1e-12)


def test_scalar_gru_hand_calculation():
    # [h; x] = [0.5; 2], weights chosen by hand
    cell = GruCell(w_z=const([[0.3, -0.2]]), b_z=const([0.1]),
                   w_r=const([[-0.4, 0.5]]), b_r=const([0.0]),
                   w_h=const([[0.7, 0.25]]), b_h=const([-0.1]))
    h, x = 0.5, 2.0
    sig = lambda u: 1.0 / (1.0 + np.exp(-u))  # noqa: E731
    z = sig(0.3 * h - 0.2 * x + 0.1)
    r = sig(-0.4 * h + 0.5 * x)
    cand = np.tanh(0.7 * r * h + 0.25 * x - 0.1)
    expected = (1 - z) * h + z * cand
    assert gru_step(cell, np.array([h]), np.array([x])).data[0] == pytest.approx(expected, abs=1e-15)


def test_gru_rejects_wrong_width():
    with pytest.raises(ad.ShapeError):
        gru_step(zero_cell(3, 2), np.zeros(3), np.zeros(4))


def test_adam_first_step_is_lr(tiny_dims):
    params = init_params(tiny_dims, 0)
    before = {k: v.copy() for k, v in params.arrays().items()}
    state = AdamState(lr=1e-3)
    adam_update(state, params, {k: np.ones_like(v) for k, v in before.items()})
    for k, v in params.arrays().items():
        np.testing.assert_allclose(v - before[k], 1e-3, rtol=1e-6)


def test_adam_zero_gradient_keeps_params(tiny_dims):
    params = init_params(tiny_dims, 0)
    before = {k: v.copy() for k, v in params.arrays().items()}
    adam_update(AdamState(), params, {k: np.zeros_like(v) for k, v in before.items()})
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(v, before[k])


def test_adam_is_deterministic(tiny_dims):
    rng = np.random.default_rng(5)
    grads = {k: rng.standard_normal(v.shape) for k, v in init_params(tiny_dims, 0).arrays().items()}
    out = []
    for _ in range(2):
        params, state = init_params(tiny_dims, 0), AdamState()
        for _ in range(3):
            adam_update(state, params, grads)
        out.append(params.arrays())
    for k in out[0]:
        np.testing.assert_array_equal(out[0][k], out[1][k])


def test_checkpoint_roundtrip_is_exact(tmp_path, tiny_dims):
    params = init_params(tiny_dims, 9)
    for t in params.tensors().values():
        t.data = t.data + np.pi / 7
    path = tmp_path / "model.dmpnn"
    save_checkpoint(params, path, meta={"seed": 9})
    loaded = load_checkpoint(path)
    assert dims_of(loaded) == tiny_dims
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(loaded.arrays()[k], v)
    assert read_checkpoint(path)[1]["seed"] == "9"


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("hello\n")
    with pytest.raises(ValueError, match="checkpoint"):
        load_checkpoint(path)
