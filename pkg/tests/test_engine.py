import numpy as np
import pytest

from ana import noise as nz
from ana import quantizer as qz
from ana.engine import (
    AdamState,
    Conv2d,
    Dense,
    DivergenceError,
    MaxPool2d,
    Network,
    QuantLayer,
    ZeroBackwardNoiseError,
    adam_step,
    conv_layer,
    cross_entropy_loss,
    dense_layer,
    fold_thresholds,
    hinge_loss,
    layer_backward,
    layer_forward,
    mlp,
    quantized_inference,
    ste_mask,
    train_epoch,
)
from ana.engine.network import evaluate_quantized, ste_reference_step
from ana.harness.data import synth_lipschitz
from ana.schedule import AnnealPolicy

HALF = nz.NoiseModel.uniform_support(0.5)


def fd_grad(fn, p, h=1e-6):
    g = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        old = p[i]
        p[i] = old + h
        up = fn()
        p[i] = old - h
        down = fn()
        p[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def assert_fd_close(analytic, numeric):
    # batchnorm makes the bias gradient exactly zero; FD noise there is ~1e-10
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


# -- forward -------------------------------------------------------------------------


def test_one_by_one_layer_example():
    layer = QuantLayer(Dense(1, 1), [[0.6]], [0.0], weight_q=qz.ternary())
    y, cache = layer_forward(layer, np.array([[1.0]]), HALF, 0.0)
    assert cache.w_tilde[0, 0] == pytest.approx(0.6, abs=1e-15)
    assert cache.w_tilde[0, 0] == pytest.approx(nz.quadrature_expectation(qz.ternary(), HALF, 0.6), abs=1e-5)
    assert y[0, 0] == pytest.approx(0.6, abs=1e-15)


def test_zero_weights_give_zero_output():
    layer = QuantLayer(Dense(3, 4), np.zeros((4, 3)), np.zeros(4), qz.ternary(), qz.ternary())
    x = np.random.default_rng(0).normal(size=(5, 3))
    for s in (0.0, 0.1, 1.0):
        y, _ = layer_forward(layer, x, s, s)
        np.testing.assert_allclose(y, 0.0, atol=1e-15)


def test_forward_shape_mismatch():
    layer = dense_layer(3, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer_forward(layer, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        QuantLayer(Dense(3, 2), np.zeros((3, 2)), np.zeros(2))


def test_noiseless_layer_is_quantized_arithmetic():
    rng = np.random.default_rng(1)
    layer = dense_layer(6, 5, rng, weight_q=qz.ternary(), act=qz.ternary())
    x = rng.normal(size=(20, 6))
    y, _ = layer_forward(layer, x, 0.0, 0.0)
    wq = np.where(layer.w >= 0.5, 1.0, np.where(layer.w >= -0.5, 0.0, -1.0))
    s = x @ wq.T + layer.b
    ref = np.where(s >= 0.5, 1.0, np.where(s >= -0.5, 0.0, -1.0))
    np.testing.assert_array_equal(y, ref)


# -- backward ------------------------------------------------------------------------


@pytest.mark.parametrize("family", ["uniform", "gaussian", "triangular"])
@pytest.mark.parametrize("bn", [False, True])
def test_layer_backward_matches_fd(family, bn):
    rng = np.random.default_rng(2)
    layer = dense_layer(4, 3, rng, weight_q=qz.ternary(), act=qz.ternary(), batchnorm=bn,
                        noise_family=family)
    x = rng.uniform(-1, 1, (6, 4))
    coeff = rng.normal(size=(6, 3))
    sw, sb = 0.3, 0.4

    def scalar():
        return float(np.sum(coeff * layer_forward(layer, x, sw, sb)[0]))

    y, cache = layer_forward(layer, x, sw, sb)
    g_in, grads = layer_backward(layer, cache, coeff, sw, sb)
    for name, p in layer.params().items():
        assert_fd_close(grads[name], fd_grad(scalar, p))
    assert_fd_close(g_in, fd_grad(scalar, x))


def test_conv_pool_bn_backward_matches_fd():
    rng = np.random.default_rng(3)
    layer = conv_layer(2, 3, 3, rng, stride=1, padding=1, pool=2, weight_q=qz.ternary(),
                       act=qz.ternary(), batchnorm=True, noise_family="gaussian")
    x = rng.uniform(-1, 1, (2, 2, 4, 4))
    coeff = rng.normal(size=(2, 3, 2, 2))

    def scalar():
        return float(np.sum(coeff * layer_forward(layer, x, 0.3, 0.3)[0]))

    y, cache = layer_forward(layer, x, 0.3, 0.3)
    assert y.shape == (2, 3, 2, 2)
    g_in, grads = layer_backward(layer, cache, coeff, 0.3, 0.3)
    for name, p in layer.params().items():
        assert_fd_close(grads[name], fd_grad(scalar, p))
    assert_fd_close(g_in, fd_grad(scalar, x))


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(4)
    conv = Conv2d(2, 3, 3, stride=2, padding=1)
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=conv.weight_shape)
    out, _ = conv.forward(x, w)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_maxpool_forward():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    out, _ = MaxPool2d(2).forward(x)
    np.testing.assert_array_equal(out[0, 0], [[5, 7], [13, 15]])


def test_zero_upstream_gradient():
    rng = np.random.default_rng(5)
    layer = dense_layer(4, 3, rng, weight_q=qz.ternary(), act=qz.ternary())
    _, cache = layer_forward(layer, rng.normal(size=(5, 4)), 0.2, 0.2)
    g_in, grads = layer_backward(layer, cache, np.zeros((5, 3)), 0.2, 0.2)
    assert not np.any(g_in)
    assert all(not np.any(g) for g in grads.values())


def test_zero_backward_noise():
    rng = np.random.default_rng(6)
    layer = dense_layer(4, 3, rng, weight_q=qz.ternary(), act=qz.ternary())
    _, cache = layer_forward(layer, rng.normal(size=(5, 4)), 0.2, 0.2)
    g = np.ones((5, 3))
    with pytest.raises(ZeroBackwardNoiseError, match="zero backward noise yields zero gradient field"):
        layer_backward(layer, cache, g, 0.0, 0.2)
    with pytest.raises(ZeroBackwardNoiseError):
        layer_backward(layer, cache, g, 0.2, 0.0)
    _, grads = layer_backward(layer, cache, g, 0.0, 0.0, zero_noise="zero")
    assert not np.any(grads["w"])
    # identity stages need no noise
    lin = dense_layer(4, 3, rng)
    _, cache = layer_forward(lin, rng.normal(size=(5, 4)))
    layer_backward(lin, cache, g, 0.0, 0.0)


# -- STE -------------------------------------------------------------------------------


def test_ste_mask_values():
    assert ste_mask(0.0) == 1.0
    assert ste_mask(1.0001) == 0.0
    assert ste_mask(-1.0) == 1.0
    assert ste_mask(1.0) == 1.0


def test_sign_with_unit_uniform_backward_is_ste():
    rng = np.random.default_rng(7)
    unit = nz.NoiseModel.uniform_support(1.0)
    layer = QuantLayer(Dense(3, 4), rng.uniform(-2, 2, (4, 3)), rng.uniform(-1, 1, 4), qz.sign(), qz.sign())
    x = rng.normal(size=(50, 3))
    _, cache = layer_forward(layer, x, 0.0, 0.0)
    g = rng.normal(size=(50, 4))
    _, grads = layer_backward(layer, cache, g, unit, unit)
    np.testing.assert_array_equal(grads["b"], (g * ste_mask(cache.z)).sum(axis=0))
    np.testing.assert_array_equal(grads["w"], ((g * ste_mask(cache.z)).T @ x) * ste_mask(layer.w))


def test_reference_binaryconnect_step_is_ana_special_case():
    rng = np.random.default_rng(8)
    net_a = mlp((5, 7, 3), rng, qz.sign())
    x = rng.normal(size=(16, 5))
    y = rng.integers(0, 3, 16)
    net_b = Network([QuantLayer(l.linear, l.w.copy(), l.b.copy(), l.weight_q, l.act) for l in net_a.layers])
    _, ref = ste_reference_step(net_a, x, y, AdamState(), 1e-3)
    unit = nz.NoiseModel.uniform_support(1.0)
    logits, caches = net_b.forward(x, 0.0, 0.0)
    _, g = hinge_loss(logits, y)
    grads = net_b.backward(caches, g, unit, unit)
    for k in ref:
        np.testing.assert_allclose(grads[k], ref[k], rtol=0, atol=1e-15)


# -- losses ------------------------------------------------------------------------------


def test_hinge_examples():
    loss, g = hinge_loss([[0.0, 0.0]], [0])
    assert loss == 1.0
    # brute force over the definition
    ref = np.mean([max(0, 1 - 1 * 0.0), max(0, 1 + 1 * 0.0)])
    assert loss == ref
    loss, g = hinge_loss([[2.0, -1.0, -3.0]], [0])
    assert loss == 0.0 and not np.any(g)


@pytest.mark.parametrize("squared", [False, True])
def test_hinge_gradient_fd(squared):
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(6, 4)) * 2
    y = rng.integers(0, 4, 6)
    # keep away from the kinks at margin 0
    sgn = -np.ones_like(logits)
    sgn[np.arange(6), y] = 1
    margin = 1 - sgn * logits
    logits[np.abs(margin) < 1e-3] += 0.01
    _, g = hinge_loss(logits, y, squared)
    fd = fd_grad(lambda: hinge_loss(logits, y, squared)[0], logits)
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_cross_entropy():
    for c in (2, 5, 10):
        loss, g = cross_entropy_loss(np.zeros((3, c)), [0, 1, 1])
        assert loss == pytest.approx(np.log(c), rel=1e-14)
    rng = np.random.default_rng(10)
    logits = rng.normal(size=(7, 5)) * 3
    y = rng.integers(0, 5, 7)
    _, g = cross_entropy_loss(logits, y)
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-15)
    fd = fd_grad(lambda: cross_entropy_loss(logits, y)[0], logits)
    np.testing.assert_allclose(g, fd, atol=1e-6)
    big, _ = cross_entropy_loss([[1000.0, -1000.0]], [1])
    assert big == pytest.approx(2000.0)


def test_loss_label_errors():
    with pytest.raises(ValueError, match="out of range"):
        hinge_loss([[0.0, 1.0]], [2])
    with pytest.raises(ValueError, match="out of range"):
        cross_entropy_loss([[0.0, 1.0]], [-1])


# -- Adam ------------------------------------------------------------------------------


def test_adam_zero_grads():
    p = {"w": np.array([1.0, -2.0])}
    st = AdamState()
    adam_step(st, p, {"w": np.array([1.0, 1.0])}, 0.1)
    before = p["w"].copy()
    m0, v0 = st.m["w"].copy(), st.v["w"].copy()
    st2 = AdamState(m={"w": m0.copy()}, v={"w": v0.copy()}, step=1)
    q = {"w": before.copy()}
    adam_step(st2, q, {"w": np.zeros(2)}, 0.0)
    np.testing.assert_array_equal(q["w"], before)
    np.testing.assert_allclose(st2.m["w"], 0.9 * m0)
    np.testing.assert_allclose(st2.v["w"], 0.999 * v0)


def test_adam_first_step():
    g = np.array([0.5, -3.0, 1e-3, 0.0])
    p = {"w": np.zeros(4)}
    adam_step(AdamState(), p, {"w": g.copy()}, 0.01)
    np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_two_step_trace():
    # reference values computed once by hand from the update rule
    p = {"w": np.array([1.0, -1.0])}
    st = AdamState()
    g = {"w": np.array([0.2, -0.4])}
    adam_step(st, p, g, 0.1)
    adam_step(st, p, {"w": g["w"].copy()}, 0.1)
    np.testing.assert_allclose(p["w"], [0.8000000099999995, -0.8000000049999999], rtol=0, atol=1e-12)
    assert st.step == 2


def test_adam_divergence():
    with pytest.raises(DivergenceError, match="divergence"):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, 0.1)


# -- networks ----------------------------------------------------------------------------


def test_last_layer_must_be_affine():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        Network([dense_layer(2, 2, rng, act=qz.ternary())])


def test_separable_blobs_train_to_low_loss():
    ds = synth_lipschitz("blobs", 512, 0)
    rng = np.random.default_rng(0)
    net = mlp((2, 8, 2), rng, qz.ternary())
    pol = AnnealPolicy("asynchronous", "linear", "constant", num_layers=2, period=50)
    opt = AdamState()
    for t in range(200):
        m = train_epoch(net, ds.x, ds.y, pol, opt, t, lr=1e-3, batch_size=32, order=rng.permutation(len(ds)))
    assert m["loss"] < 0.05
    assert evaluate_quantized(net, ds.x, ds.y) == 1.0


def test_train_epoch_is_deterministic():
    ds = synth_lipschitz("rings", 128, 0)
    runs = []
    for _ in range(2):
        net = mlp((2, 8, 8, 2), np.random.default_rng(3), qz.ternary(), batchnorm=True)
        pol = AnnealPolicy("asynchronous", "linear", "constant", num_layers=3, period=2)
        opt = AdamState()
        hist = [train_epoch(net, ds.x, ds.y, pol, opt, t, batch_size=16) for t in range(8)]
        runs.append((hist, [p.copy() for p in net.params().values()]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        np.testing.assert_array_equal(a, b)


def test_synchronous_training_survives_annealed_layers():
    ds = synth_lipschitz("blobs", 64, 0)
    net = mlp((2, 4, 2), np.random.default_rng(0), qz.ternary())
    pol = AnnealPolicy("synchronous", "linear", "constant", num_layers=2, period=1)
    opt = AdamState()
    for t in range(4):
        m = train_epoch(net, ds.x, ds.y, pol, opt, t)
        assert np.isfinite(m["loss"])


def test_identity_quantizers_match_plain_mlp():
    # with no quantizers and no noise the engine is an ordinary linear MLP
    rng = np.random.default_rng(11)
    net = mlp((3, 5, 2), rng, None)
    w1, b1 = net.layers[0].w.copy(), net.layers[0].b.copy()
    w2, b2 = net.layers[1].w.copy(), net.layers[1].b.copy()
    x = rng.normal(size=(40, 3))
    y = rng.integers(0, 2, 40)
    pol = AnnealPolicy(num_layers=2)
    opt = AdamState()
    ref = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    m = {k: np.zeros_like(v) for k, v in ref.items()}
    v = {k: np.zeros_like(v) for k, v in ref.items()}
    for t in range(3):
        for s in range(0, 40, 10):
            xb, yb = x[s:s + 10], y[s:s + 10]
            h = xb @ ref["w1"].T + ref["b1"]
            out = h @ ref["w2"].T + ref["b2"]
            p = np.exp(out - out.max(1, keepdims=True))
            p /= p.sum(1, keepdims=True)
            p[np.arange(10), yb] -= 1
            g2 = p / 10
            g1 = g2 @ ref["w2"]
            grads = {"w2": g2.T @ h, "b2": g2.sum(0), "w1": g1.T @ xb, "b1": g1.sum(0)}
            step = t * 4 + s // 10 + 1
            for k in ref:
                m[k] = 0.9 * m[k] + 0.1 * grads[k]
                v[k] = 0.999 * v[k] + 0.001 * grads[k] ** 2
                ref[k] = ref[k] - 1e-2 * (m[k] / (1 - 0.9 ** step)) / (np.sqrt(v[k] / (1 - 0.999 ** step)) + 1e-8)
        train_epoch(net, x, y, pol, opt, t, lr=1e-2, batch_size=10)
    np.testing.assert_allclose(net.layers[0].w, ref["w1"], atol=1e-12)
    np.testing.assert_allclose(net.layers[1].b, ref["b2"], atol=1e-12)


# -- quantized inference ---------------------------------------------------------------


def _trained_ternary_net(bn=True):
    rng = np.random.default_rng(12)
    net = mlp((4, 16, 16, 3), rng, qz.ternary(), batchnorm=bn)
    x = rng.normal(size=(64, 4))
    y = rng.integers(0, 3, 64)
    pol = AnnealPolicy(num_layers=3, period=2)
    opt = AdamState()
    for t in range(3):
        train_epoch(net, x, y, pol, opt, t, batch_size=16)
    return net


@pytest.mark.parametrize("bn", [False, True])
def test_quantized_inference_equals_noiseless_forward(bn):
    net = _trained_ternary_net(bn)
    x = np.random.default_rng(13).normal(size=(1000, 4))
    a = quantized_inference(net, x)
    b = net.predict(x, 0.0, 0.0)
    assert np.max(np.abs(a - b)) == 0.0
    h = x
    for layer in net.layers[:-1]:
        assert np.all(np.isin(layer.quantized_weights(), (-1.0, 0.0, 1.0)))
        h, _ = layer_forward(layer, h, 0.0, 0.0, training=False)
        assert np.all(np.isin(h, (-1.0, 0.0, 1.0)))


def test_quantized_inference_rejects_noise():
    net = _trained_ternary_net()
    with pytest.raises(ValueError):
        quantized_inference(net, np.zeros((1, 4)), forward_sigmas=[0.0, 0.1, 0.0])


def test_folded_thresholds_reproduce_activations():
    net = _trained_ternary_net()
    layer = net.layers[0]
    th, inc = fold_thresholds(layer)
    x = np.random.default_rng(14).normal(size=(300, 4))
    y, cache = layer_forward(layer, x, 0.0, 0.0, training=False)
    s = cache.s
    # count crossed thresholds in accumulator space
    up = np.where(inc[None, :, None], s[:, :, None] >= th[None], s[:, :, None] <= th[None])
    folded = np.asarray(layer.act.levels)[up.sum(axis=2)]
    near = np.any(np.abs(s[:, :, None] - th[None]) < 1e-9, axis=2)
    assert np.array_equal(folded[~near], y[~near])
