import numpy as np
import pytest

from lobforge.nn import (LSTM, Adam, Conv2d, Dense, MaxPool2d, Param, ReLU, Rng, Sequential, Sigmoid,
                         Tanh, available_backends, conv2d_forward, grad_check, lstm_step_forward,
                         maxpool2d_forward, mse_loss, rel_error, seeded_init)
from lobforge.nn import _pykernels
from lobforge.nn.rng import splitmix64
from lobforge.errors import ShapeMismatch

from conftest import BACKENDS
from gradutil import LAYER_CHECKS


def naive_conv(x, w, b, pad):
    x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, _, h, wd = x.shape
    cout, _, kh, kw = w.shape
    out = np.zeros((n, cout, h - kh + 1, wd - kw + 1))
    for i in range(out.shape[2]):
        for j in range(out.shape[3]):
            patch = x[:, :, i:i + kh, j:j + kw]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


def test_conv_matches_loops(backend):
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    out, _ = conv2d_forward(x, w, b, padding=1)
    np.testing.assert_allclose(out, naive_conv(x, w, b, 1), rtol=1e-12, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 3, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeMismatch):
        conv2d_forward(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 2, 2)), np.zeros(1), stride=2)


def test_maxpool_matches_loops(backend):
    x = np.random.default_rng(1).standard_normal((2, 3, 4, 6))
    out, _ = maxpool2d_forward(x, 2)
    ref = x.reshape(2, 3, 2, 2, 3, 2).max(axis=(3, 5))
    np.testing.assert_array_equal(out, ref)


@pytest.mark.parametrize("name", sorted(LAYER_CHECKS))
def test_layer_gradients(name, backend):
    for seed in range(3):
        assert LAYER_CHECKS[name](seed) < 1e-4


def test_activation_and_sequence_gradients():
    rng = Rng(0, "act")
    net = Sequential(Dense(4, 6, Rng(1, "a")), Sigmoid(), Dense(6, 6, Rng(2, "b")), Tanh(),
                     Dense(6, 3, Rng(3, "c")))
    assert grad_check(net, rng.uniform((3, 4), -1, 1), max_coords=None).passed
    lstm = LSTM(3, 4, Rng(4, "l"))
    assert grad_check(lstm, rng.uniform((2, 5, 3), -1, 1), max_coords=None).passed


def test_relu_kink_resampling():
    def draw(r):
        return r.uniform((2, 5), -1, 1)

    x = np.array([[1e-9, 0.5, -0.5, 0.3, 0.2], [0.1, -0.2, 0.3, -0.4, 0.5]])
    rep = grad_check(Sequential(Dense(5, 5, Rng(0, "d")), ReLU()), x, resample=draw)
    assert rep.passed


def test_lstm_gate_order():
    # only the g block and o block are open: c' = i*g with i = sigmoid(0) = 0.5
    h = 2
    W = np.zeros((4 * h, 1))
    U = np.zeros((4 * h, h))
    b = np.zeros(4 * h)
    b[2 * h:3 * h] = 10.0  # g -> tanh(10) ~ 1
    b[h:2 * h] = -50.0  # forget gate closed
    _, c, _ = lstm_step_forward(np.zeros((1, 1)), np.zeros((1, h)), np.ones((1, h)), W, U, b)
    np.testing.assert_allclose(c, 0.5 * np.tanh(10.0), rtol=1e-12)


def test_mse_value():
    loss, grad = mse_loss(np.array([[1.0], [3.0]]), np.array([[0.0], [0.0]]))
    assert loss == 5.0
    np.testing.assert_array_equal(grad, [[1.0], [3.0]])


def test_splitmix_and_xoshiro_reference_values(backend):
    assert splitmix64(0)[1] == 0xE220A8397B1DCDAF
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    from lobforge.nn import _backend

    first = _backend.kernels.xoshiro_uniform(state, 1)[0]
    assert first == (11520 >> 11) / 2.0**53  # xoshiro256** first output for state (1, 2, 3, 4)


def test_backend_parity_bit_identical():
    if "cython" not in BACKENDS:
        pytest.skip("compiled kernels not built")
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4, 7, 6))
    np.testing.assert_array_equal(py.im2col(x, 3, 2, 1, 2), cy.im2col(x, 3, 2, 1, 2))
    cols = rng.standard_normal(py.im2col(x, 3, 3, 2, 1).shape)
    np.testing.assert_array_equal(py.col2im(cols, x.shape, 3, 3, 2, 1), cy.col2im(cols, x.shape, 3, 3, 2, 1))
    for k, s in ((2, 2), (3, 1)):
        o1, a1 = py.maxpool_forward(x, k, k, s, s)
        o2, a2 = cy.maxpool_forward(x, k, k, s, s)
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(a1, a2)
        d = rng.standard_normal(o1.shape)
        np.testing.assert_array_equal(py.maxpool_backward(d, a1, x.shape, k, k, s, s),
                                      cy.maxpool_backward(d, a2, x.shape, k, k, s, s))
    s1 = np.array([9, 8, 7, 6], dtype=np.uint64)
    s2 = s1.copy()
    np.testing.assert_array_equal(py.xoshiro_uniform(s1, 1000), cy.xoshiro_uniform(s2, 1000))
    np.testing.assert_array_equal(s1, s2)


def test_available_backends():
    assert "python" in available_backends()


def test_rng_streams_and_permutation():
    a, b = Rng(1, "init:conv0"), Rng(1, "shuffle")
    assert not np.array_equal(a.random(5), b.random(5))
    p = Rng(2, "p").permutation(50)
    assert sorted(p) == list(range(50))
    np.testing.assert_array_equal(Rng(3, "x").random(4), Rng(3, "x").random(4))


def test_seeded_init_bounds():
    w = seeded_init((100, 16), 16, Rng(0, "w"))
    assert w.dtype == np.float32 and np.abs(w).max() <= 0.25


def test_adam_first_step():
    p = Param("w", np.array([1.0, -2.0], dtype=np.float32))
    p.grad = np.array([0.5, -4.0])
    opt = Adam([p], lr=0.1)
    opt.step()
    # bias-corrected first step moves by lr * g / (|g| + eps)
    expected = np.array([1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8)], dtype=np.float32)
    np.testing.assert_array_equal(p.value, expected)
    assert p.value.dtype == np.float32


def test_rel_error_floor():
    assert rel_error([0.0, 1.0], [1e-12, 1.0]) < 1e-8
