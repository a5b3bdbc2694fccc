import math

import numpy as np
import pytest

from resetfree import nn


def _random_net(sizes, seed, head="linear"):
    return nn.Mlp.init(sizes, np.random.default_rng(seed), head=head)


def test_zero_linear_layer_outputs_zero():
    net = nn.Mlp((3, 2))
    np.testing.assert_array_equal(nn.mlp_forward(net, [1.0, -2.0, 3.0]), [0.0, 0.0])


def test_identity_relu_passes_positive_input():
    net = nn.Mlp((3, 3, 3))
    net.weights[0][...] = np.eye(3)
    net.weights[1][...] = np.eye(3)
    x = np.array([0.5, 1.5, 2.5])
    np.testing.assert_array_equal(nn.mlp_forward(net, x), x)


def test_sigmoid_head_at_zero_logit():
    net = nn.Mlp((4, 1), head="sigmoid")
    assert nn.mlp_forward(net, np.ones(4))[0] == 0.5


def test_sigmoid_head_never_saturates():
    net = nn.Mlp((1, 1), head="sigmoid")
    net.weights[0][0, 0] = 1.0
    out = nn.mlp_forward(net, np.array([[1e6], [-1e6]]))[:, 0]
    assert 0.0 < out[1] < out[0] < 1.0
    assert math.isfinite(math.log(out[1])) and math.isfinite(math.log(1 - out[0]))


def test_gaussian_head_clamps_log_std():
    net = nn.Mlp((1, 4), head="gaussian")
    net.biases[0][...] = [0.3, -0.2, 50.0, -50.0]
    out = nn.mlp_forward(net, np.zeros(1))
    np.testing.assert_array_equal(out, [0.3, -0.2, nn.LOG_STD_MAX, nn.LOG_STD_MIN])


def test_shape_mismatch_names_layer():
    net = nn.Mlp((3, 4, 1))
    with pytest.raises(ValueError, match="layer 0"):
        nn.mlp_forward(net, np.zeros(5))
    with pytest.raises(ValueError, match="upstream"):
        nn.mlp_gradient(net, np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError, match="expected"):
        nn.Mlp((3, 4, 1), flat=np.zeros(3))


def test_raw_matches_forward_batch_and_single():
    net = _random_net((4, 8, 8, 2), 0)
    x = np.random.default_rng(1).normal(size=(5, 4))
    out, _ = net.forward(x)
    np.testing.assert_allclose(net.raw(x), out, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(net.raw(x[2]), out[2], rtol=1e-12, atol=1e-12)


def _numeric_gradient(net, f, h=1e-5):
    g = np.empty_like(net.flat)
    for i in range(net.flat.size):
        orig = net.flat[i]
        net.flat[i] = orig + h
        fp = f()
        net.flat[i] = orig - h
        fm = f()
        net.flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("head", ["linear", "sigmoid", "gaussian"])
def test_mlp_gradient_matches_central_differences(seed, head):
    rng = np.random.default_rng(100 + seed)
    net = _random_net((3, 5, 4, 2), seed, head=head)
    x = rng.normal(size=(6, 3))
    up = rng.normal(size=(6, 2))
    analytic = nn.mlp_gradient(net, x, up)
    numeric = _numeric_gradient(net, lambda: float(np.sum(nn.mlp_forward(net, x) * up)))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    assert np.max(np.abs(analytic - numeric) / denom) < 1e-4


def test_zero_upstream_gives_zero_gradient():
    net = _random_net((3, 5, 2), 4)
    g = nn.mlp_gradient(net, np.ones(3), np.zeros(2))
    np.testing.assert_array_equal(g, 0.0)


def test_linear_scalar_gradient_is_input():
    net = nn.Mlp((1, 1))
    net.weights[0][0, 0] = 0.7
    g = nn.mlp_gradient(net, np.array([2.5]), np.array([1.0]))
    assert g[0] == 2.5  # d(w x)/dw
    assert g[1] == 1.0  # d(w x + b)/db


def test_input_gradient():
    net = _random_net((3, 6, 1), 5)
    x = np.random.default_rng(2).normal(size=(4, 3))
    _, acts = net.forward(x)
    _, dx = net.backward(acts, np.ones((4, 1)), input_grad=True)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1e-6
        num = (net.forward(x + e)[0] - net.forward(x - e)[0])[:, 0] / 2e-6
        np.testing.assert_allclose(dx[:, j], num, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("cls", [nn.Adam, nn.RMSprop])
def test_zero_gradient_leaves_params(cls):
    net = _random_net((3, 4, 1), 0)
    before = net.flat.copy()
    opt = cls(1e-3, net.flat.size)
    nn.optimizer_step(opt, net, np.zeros_like(net.flat))
    np.testing.assert_array_equal(net.flat, before)
    assert opt.step == 1


@pytest.mark.parametrize("cls", [nn.Adam, nn.RMSprop])
def test_zero_learning_rate_is_identity(cls):
    net = _random_net((3, 4, 1), 0)
    before = net.flat.copy()
    opt = cls(0.0, net.flat.size)
    rng = np.random.default_rng(0)
    for _ in range(5):
        nn.optimizer_step(opt, net, rng.normal(size=net.flat.size))
    np.testing.assert_array_equal(net.flat, before)


def test_adam_first_step_magnitude_is_lr():
    net = nn.Mlp((1, 1))
    net.biases[0][0] = 0.0
    opt = nn.Adam(0.01, net.flat.size)
    nn.optimizer_step(opt, net, np.ones(net.flat.size))
    # m_hat = v_hat = 1 after bias correction -> step = lr * 1 / (1 + eps)
    np.testing.assert_allclose(net.flat, -0.01 / (1 + 1e-8), rtol=1e-15)


def test_rmsprop_rule():
    p = np.array([1.0, -2.0])
    net = nn.Mlp((1, 1), flat=p)
    opt = nn.RMSprop(0.1, 2, rho=0.9, eps=1e-8)
    g = np.array([0.5, -3.0])
    nn.optimizer_step(opt, net, g)
    sq = 0.1 * g * g
    np.testing.assert_allclose(net.flat, p - 0.1 * g / np.sqrt(sq + 1e-8), rtol=1e-14)


def test_rmsprop_keeps_no_first_moment():
    opt = nn.RMSprop(1e-4, 10)
    assert set(opt.accumulators()) == {"sq"}
    assert not hasattr(opt, "m")
    assert set(nn.Adam(1e-4, 10).accumulators()) == {"m", "v"}


def test_non_finite_gradient_rejected():
    net = nn.Mlp((2, 1))
    opt = nn.Adam(1e-3, net.flat.size)
    g = np.zeros(net.flat.size)
    g[1] = np.nan
    with pytest.raises(FloatingPointError, match="index 1"):
        nn.optimizer_step(opt, net, g)
    assert opt.step == 0


@pytest.mark.parametrize("tau, expected", [(1.0, 1.0), (0.0, 0.0), (0.005, 0.005)])
def test_polyak(tau, expected):
    target = nn.Mlp((2, 2))
    online = nn.Mlp((2, 2), flat=np.ones(6))
    nn.polyak_update(target, online, tau)
    np.testing.assert_allclose(target.flat, expected, rtol=0, atol=1e-15)


def test_polyak_tau_one_copies_exactly():
    target = _random_net((3, 4, 2), 0)
    online = _random_net((3, 4, 2), 1)
    nn.polyak_update(target, online, 1.0)
    np.testing.assert_array_equal(target.flat, online.flat)


def _squared_error(x, y):
    def loss_and_grad(net):
        out, acts = net.forward(x)
        err = out - y
        grad, _ = net.backward(acts, 2.0 * err / err.size)
        return float(np.mean(err ** 2)), grad
    return loss_and_grad


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_finite_diff_check_small_net(seed):
    rng = np.random.default_rng(seed)
    net = _random_net((4, 8, 8, 1), seed)
    x, y = rng.normal(size=(16, 4)), rng.normal(size=(16, 1))
    assert nn.finite_diff_check(net, _squared_error(x, y)) < 1e-4


def test_finite_diff_check_linear_model():
    rng = np.random.default_rng(3)
    net = _random_net((5, 1), 3)
    x, y = rng.normal(size=(10, 5)), rng.normal(size=(10, 1))
    assert nn.finite_diff_check(net, _squared_error(x, y)) < 1e-7


def test_finite_diff_check_constant_loss():
    net = _random_net((3, 4, 1), 0)
    assert nn.finite_diff_check(net, lambda n: (1.5, np.zeros_like(n.flat))) < 1e-4


def test_finite_diff_check_detects_wrong_gradient():
    rng = np.random.default_rng(0)
    net = _random_net((3, 4, 1), 0)
    good = _squared_error(rng.normal(size=(8, 3)), rng.normal(size=(8, 1)))
    assert nn.finite_diff_check(net, lambda n: (good(n)[0], 2 * good(n)[1])) > 0.1


@pytest.mark.parametrize("cls", [nn.Adam, nn.RMSprop, None])
def test_checkpoint_round_trip(tmp_path, cls):
    net = _random_net((4, 7, 3), 0, head="sigmoid")
    opt = None
    if cls is not None:
        opt = cls(3e-4, net.flat.size)
        nn.optimizer_step(opt, net, np.random.default_rng(0).normal(size=net.flat.size))
    path = tmp_path / "net.bin"
    nn.save_network(path, net, opt)
    raw = path.read_bytes()
    assert raw.startswith(b"RFNET 1\n")
    header_end = raw.index(b"\n", 8)
    payload = raw[header_end + 1:]
    np.testing.assert_array_equal(np.frombuffer(payload[:net.flat.size * 8], dtype="<f8"),
                                  net.flat)
    net2, opt2 = nn.load_network(path)
    assert net2.sizes == net.sizes and net2.head == "sigmoid"
    np.testing.assert_array_equal(net2.flat, net.flat)
    if cls is None:
        assert opt2 is None
    else:
        assert type(opt2) is cls and opt2.step == 1 and opt2.lr == 3e-4
        for key, arr in opt.accumulators().items():
            np.testing.assert_array_equal(opt2.accumulators()[key], arr)
