import numpy as np
import pytest

from conftest import numeric_grad, rel_error
from tumorcnn import nn
from tumorcnn.errors import BuildError, ContractError, DimensionError


def brute_conv(x, w, b):
    """Direct sliding-window cross-correlation with zero padding 1."""
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, wd, cout))
    for i in range(n):
        for y in range(h):
            for xx in range(wd):
                for o in range(cout):
                    out[i, y, xx, o] = np.sum(xp[i, y:y + 3, xx:xx + 3, :] * w[:, :, :, o]) + b[o]
    return out


def closed_form_count(input_hw, cin, filters, hidden, classes):
    """Independent parameter count: (k*k*Cin+1)*Cout per conv, (fan_in+1)*units per dense."""
    counts = []
    h = input_hw
    for f in filters:
        counts.append((3 * 3 * cin + 1) * f)
        cin = f
        h = h // 2
    flat = h * h * cin
    counts.append((flat + 1) * hidden)
    counts.append((hidden + 1) * classes)
    return counts


# -- architecture -----------------------------------------------------------


def test_param_count_four_classes():
    spec = nn.build_proposed_cnn((168, 168, 3), 4)
    assert nn.trainable_param_count(spec) == 13_372_484
    assert [n for _, n in spec.layer_params()] == [1792, 36928, 73856, 147584, 13_108_224, 4100]
    assert [n for _, n in spec.layer_params()] == closed_form_count(168, 3, (64, 64, 128, 128), 1024, 4)


def test_param_count_three_classes():
    spec = nn.build_proposed_cnn((168, 168, 3), 3)
    oracle = sum(closed_form_count(168, 3, (64, 64, 128, 128), 1024, 3))
    assert oracle == 13_371_459
    assert nn.trainable_param_count(spec) == oracle


def test_model_storage_matches_analytic_count():
    spec = nn.build_proposed_cnn((168, 168, 3), 4)
    model = nn.Model(spec)
    assert model.param_count() == nn.trainable_param_count(spec)
    assert {k: v.shape for k, v in model.grads.items()} == {k: v.shape for k, v in model.params.items()}
    assert list(model.params) == ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b",
                                  "conv4.w", "conv4.b", "dense1.w", "dense1.b", "dense2.w", "dense2.b"]


def test_spatial_trace():
    trace = nn.build_proposed_cnn().shape_trace()
    pooled = [s[0] for s, layer in zip(trace[1:], nn.build_proposed_cnn().layers) if layer.kind == "MaxPool2D"]
    assert [trace[0][0]] + pooled == [168, 84, 42, 21, 10]
    assert trace[-1] == (4,)


def test_layer_sequence():
    kinds = [layer.kind for layer in nn.build_proposed_cnn().layers]
    block = ["Conv2D", "LeakyReLU", "MaxPool2D"]
    assert kinds == block * 4 + ["Flatten", "Dense", "LeakyReLU", "Dropout", "Dense", "SoftmaxOutput"]


def test_single_dense_spec_count():
    spec = nn.ModelSpec((2, 2, 3), (nn.LayerSpec("Flatten"), nn.LayerSpec("Dense", units=5, name="d"),
                                    nn.LayerSpec("SoftmaxOutput")), 5)
    assert nn.trainable_param_count(spec) == 12 * 5 + 5


@pytest.mark.parametrize("bad", [
    dict(input_shape=(15, 15, 3), classes=4),
    dict(input_shape=(168, 168, 3), classes=1),
])
def test_build_errors(bad):
    with pytest.raises(BuildError):
        nn.build_proposed_cnn(**bad)


def test_layerspec_invariants():
    for kwargs in (dict(kind="Conv2D", filters=0), dict(kind="Dense", units=0),
                   dict(kind="LeakyReLU", slope=0.0), dict(kind="Dropout", rate=1.0)):
        with pytest.raises(BuildError):
            nn.LayerSpec(**kwargs)


# -- conv -------------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 5, 4, 1))
    w = np.zeros((3, 3, 1, 1))
    w[1, 1, 0, 0] = 1
    np.testing.assert_array_equal(nn.conv2d_forward(x, w, np.zeros(1)), x)


def test_conv_ones():
    out = nn.conv2d_forward(np.ones((1, 3, 3, 1)), np.ones((3, 3, 1, 1)), np.zeros(1))
    expected = brute_conv(np.ones((1, 3, 3, 1)), np.ones((3, 3, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(expected[0, :, :, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])
    np.testing.assert_array_equal(out, expected)


def test_conv_bias_only():
    out = nn.conv2d_forward(np.random.default_rng(1).random((2, 4, 4, 3)), np.zeros((3, 3, 3, 2)),
                            np.array([0.5, 0.5]))
    np.testing.assert_array_equal(out, np.full((2, 4, 4, 2), 0.5))


def test_conv_matches_brute_force():
    g = np.random.default_rng(2)
    x, w, b = g.standard_normal((2, 6, 5, 3)), g.standard_normal((3, 3, 3, 4)), g.standard_normal(4)
    np.testing.assert_allclose(nn.conv2d_forward(x, w, b), brute_conv(x, w, b), atol=1e-12)


def test_conv_chunking_does_not_change_result(monkeypatch):
    g = np.random.default_rng(3)
    x, w, b = g.standard_normal((5, 6, 6, 2)), g.standard_normal((3, 3, 2, 3)), g.standard_normal(3)
    gout = g.standard_normal((5, 6, 6, 3))
    whole = nn.conv2d_forward(x, w, b), nn.conv2d_backward(x, w, gout)
    monkeypatch.setattr(nn, "_COLS_BUDGET", 1)
    chunked = nn.conv2d_forward(x, w, b), nn.conv2d_backward(x, w, gout)
    np.testing.assert_allclose(chunked[0], whole[0], atol=1e-12)
    for a, c in zip(whole[1], chunked[1]):
        np.testing.assert_allclose(c, a, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        nn.conv2d_forward(np.zeros((1, 3, 3, 2)), np.zeros((3, 3, 1, 1)), np.zeros(1))


def test_conv_backward_zero_and_identity():
    x = np.random.default_rng(4).standard_normal((1, 4, 4, 1))
    w = np.zeros((3, 3, 1, 1))
    w[1, 1, 0, 0] = 1
    gx, gw, gb = nn.conv2d_backward(x, w, np.zeros((1, 4, 4, 1)))
    assert not gx.any() and not gw.any() and not gb.any()
    gout = np.zeros((1, 4, 4, 1))
    gout[0, 2, 1, 0] = 1.0
    gx, _, _ = nn.conv2d_backward(x, w, gout)
    np.testing.assert_array_equal(gx, gout)


@pytest.mark.parametrize("seed", range(3))
def test_conv_backward_finite_differences(seed):
    g = np.random.default_rng(seed)
    x, w, b = g.standard_normal((1, 5, 5, 2)), g.standard_normal((3, 3, 2, 3)), g.standard_normal(3)
    proj = g.standard_normal((1, 5, 5, 3))
    f = lambda: float(np.sum(nn.conv2d_forward(x, w, b) * proj))
    gx, gw, gb = nn.conv2d_backward(x, w, proj)
    assert rel_error(gx, numeric_grad(f, x)) < 1e-4
    assert rel_error(gw, numeric_grad(f, w)) < 1e-4
    assert rel_error(gb, numeric_grad(f, b)) < 1e-4


# -- pooling ----------------------------------------------------------------


def test_pool_single_window():
    out, _ = nn.maxpool2x2_forward(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 4


def test_pool_floor_semantics():
    out, idx = nn.maxpool2x2_forward(np.random.default_rng(0).random((1, 21, 21, 2)))
    assert out.shape == (1, 10, 10, 2)
    grad = nn.maxpool2x2_backward(idx, np.ones_like(out))
    assert grad.shape == (1, 21, 21, 2)
    assert not grad[:, 20, :, :].any() and not grad[:, :, 20, :].any()


def test_pool_constant_input_ties_go_to_first_cell():
    x = np.full((1, 4, 4, 1), 0.7)
    out, idx = nn.maxpool2x2_forward(x)
    np.testing.assert_array_equal(out, 0.7)
    grad = nn.maxpool2x2_backward(idx, np.ones_like(out))
    np.testing.assert_array_equal(grad[0, :, :, 0], [[1, 0, 1, 0], [0, 0, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0]])


def test_pool_backward_routes_to_max():
    x = np.array([[1.0, 5.0], [3.0, 2.0]]).reshape(1, 2, 2, 1)
    out, idx = nn.maxpool2x2_forward(x)
    grad = nn.maxpool2x2_backward(idx, np.full_like(out, 2.5))
    np.testing.assert_array_equal(grad[0, :, :, 0], [[0, 2.5], [0, 0]])
    assert not nn.maxpool2x2_backward(idx, np.zeros_like(out)).any()


def test_pool_errors():
    with pytest.raises(DimensionError):
        nn.maxpool2x2_forward(np.zeros((1, 1, 4, 1)))
    _, idx = nn.maxpool2x2_forward(np.zeros((1, 4, 4, 1)))
    with pytest.raises(ContractError):
        nn.maxpool2x2_backward(idx, np.zeros((1, 3, 3, 1)))


def test_pool_backward_finite_differences():
    g = np.random.default_rng(5)
    x = g.permutation(np.arange(50, dtype=np.float64)).reshape(1, 5, 5, 2) / 10.0  # distinct values, no ties
    proj = g.standard_normal((1, 2, 2, 2))
    f = lambda: float(np.sum(nn.maxpool2x2_forward(x)[0] * proj))
    _, idx = nn.maxpool2x2_forward(x)
    assert rel_error(nn.maxpool2x2_backward(idx, proj), numeric_grad(f, x)) < 1e-4


# -- activations, dense, dropout, loss -------------------------------------


def test_leaky_relu_values():
    assert nn.leaky_relu(np.array([2.0]))[0] == 2.0
    assert nn.leaky_relu(np.array([-1.0]), 0.3)[0] == pytest.approx(-0.3)
    assert nn.leaky_relu(np.array([0.0]))[0] == 0.0
    assert nn.leaky_relu_backward(np.array([0.0]), np.array([1.0]), 0.3)[0] == pytest.approx(0.3)
    assert nn.DEFAULT_SLOPE == 0.3


def test_leaky_relu_finite_differences():
    g = np.random.default_rng(6)
    x = g.standard_normal(40)
    x[np.abs(x) < 1e-3] = 0.5  # away from the kink
    proj = g.standard_normal(40)
    f = lambda: float(np.sum(nn.leaky_relu(x, 0.3) * proj))
    assert rel_error(nn.leaky_relu_backward(x, proj, 0.3), numeric_grad(f, x)) < 1e-4


def test_dense_examples():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(nn.dense_forward(x, np.eye(2), np.zeros(2)), x)
    np.testing.assert_array_equal(nn.dense_forward(x, np.eye(2), np.array([10.0, 20.0])), [[11, 22]])
    with pytest.raises(DimensionError):
        nn.dense_forward(x, np.eye(3), np.zeros(3))


def test_dense_finite_differences():
    g = np.random.default_rng(7)
    x, w, b = g.standard_normal((3, 4)), g.standard_normal((4, 5)), g.standard_normal(5)
    proj = g.standard_normal((3, 5))
    f = lambda: float(np.sum(nn.dense_forward(x, w, b) * proj))
    gx, gw, gb = nn.dense_backward(x, w, proj)
    for analytic, wrt in ((gx, x), (gw, w), (gb, b)):
        assert rel_error(analytic, numeric_grad(f, wrt)) < 1e-4


def test_dropout_modes():
    x = np.ones((4, 5), dtype=np.float32)
    assert nn.dropout(x, 0.0, True, np.random.default_rng(0))[0] is x
    assert nn.dropout(x, 0.5, False)[0] is x
    with pytest.raises(ContractError):
        nn.dropout(x, 0.5, True)


def test_dropout_mean_concentrates():
    out, mask = nn.dropout(np.ones(10**6, dtype=np.float32), 0.5, True, np.random.default_rng(123))
    assert 0.95 <= out.mean() <= 1.05
    assert set(np.unique(out).tolist()) == {0.0, 2.0}
    np.testing.assert_array_equal(out, mask)


def test_softmax_xent_examples():
    labels = np.eye(4)[[0, 1]]
    loss, probs, _ = nn.softmax_xent(np.zeros((2, 4)), labels)
    assert loss == pytest.approx(np.log(4))
    loss, probs, _ = nn.softmax_xent(np.array([[1000.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert loss == pytest.approx(0.0, abs=1e-12) and np.isfinite(probs).all()
    with pytest.raises(ContractError):
        nn.softmax_xent(np.zeros((1, 2)), np.array([[0.5, 0.5]]))


def test_softmax_xent_gradient():
    g = np.random.default_rng(8)
    logits = g.standard_normal((5, 4)) * 3
    labels = np.eye(4)[g.integers(0, 4, 5)]
    loss, probs, grad = nn.softmax_xent(logits, labels)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(grad, (probs - labels) / 5, atol=1e-15)
    f = lambda: nn.softmax_xent(logits, labels)[0]
    assert rel_error(grad, numeric_grad(f, logits)) < 1e-4


# -- model ------------------------------------------------------------------


def small_spec(classes=3, slope=0.3, rate=0.0):
    layers = (
        nn.LayerSpec("Conv2D", filters=3, name="conv1"), nn.LayerSpec("LeakyReLU", slope=slope),
        nn.LayerSpec("MaxPool2D"),
        nn.LayerSpec("Conv2D", filters=2, name="conv2"), nn.LayerSpec("LeakyReLU", slope=slope),
        nn.LayerSpec("MaxPool2D"), nn.LayerSpec("Flatten"),
        nn.LayerSpec("Dense", units=6, name="dense1"), nn.LayerSpec("LeakyReLU", slope=slope),
        nn.LayerSpec("Dropout", rate=rate), nn.LayerSpec("Dense", units=classes, name="dense2"),
        nn.LayerSpec("SoftmaxOutput"),
    )
    return nn.ModelSpec((6, 5, 2), layers, classes)


def test_model_backward_finite_differences():
    model = nn.Model(small_spec(), np.float64).init(11)
    g = np.random.default_rng(9)
    x = g.standard_normal((2, 6, 5, 2))
    labels = np.eye(3)[[0, 2]]

    def loss():
        probs = model.forward(x)
        return float(-np.mean(np.log(np.sum(probs * labels, axis=1))))

    model.zero_grads()
    model.forward(x, train=True, gen=np.random.default_rng(0))
    model.backward(labels)
    for key, p in model.params.items():
        assert rel_error(model.grads[key], numeric_grad(loss, p)) < 1e-4, key


def test_model_dropout_mask_reused_in_backward():
    model = nn.Model(small_spec(rate=0.5), np.float64).init(1)
    x = np.random.default_rng(2).standard_normal((3, 6, 5, 2))
    labels = np.eye(3)[[0, 1, 2]]

    def loss():
        # re-seeding reproduces the training mask
        probs = model.forward(x, train=True, gen=np.random.default_rng(77))
        model._caches = []
        return float(-np.mean(np.log(np.sum(probs * labels, axis=1))))

    model.zero_grads()
    model.forward(x, train=True, gen=np.random.default_rng(77))
    model.backward(labels)
    assert rel_error(model.grads["dense1.w"], numeric_grad(loss, model.params["dense1.w"])) < 1e-4


def test_backward_without_forward():
    model = nn.Model(small_spec()).init(0)
    with pytest.raises(ContractError):
        model.backward(np.eye(3)[[0]])
    model.forward(np.zeros((1, 6, 5, 2), np.float32))  # eval mode caches nothing
    with pytest.raises(ContractError):
        model.backward(np.eye(3)[[0]])


def test_zero_model_gives_uniform_probs():
    model = nn.Model(nn.build_proposed_cnn((168, 168, 3), 4))
    probs = model.forward(np.zeros((2, 168, 168, 3), np.float32))
    np.testing.assert_array_equal(probs, 0.25)


def test_eval_forward_bit_identical():
    model = nn.Model(small_spec(rate=0.5)).init(3)
    x = np.random.default_rng(0).random((4, 6, 5, 2)).astype(np.float32)
    np.testing.assert_array_equal(model.forward(x), model.forward(x))


def test_init_seeded_and_scaled():
    a = nn.Model(small_spec()).init(5)
    b = nn.Model(small_spec()).init(5)
    c = nn.Model(small_spec()).init(6)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert not np.array_equal(a.params["conv1.w"], c.params["conv1.w"])
    assert not a.params["conv1.b"].any()
    big = nn.Model(nn.build_proposed_cnn()).init(0).params["dense1.w"]
    assert np.std(big) == pytest.approx(np.sqrt(2 / 12800), rel=0.01)
    assert np.abs(big).max() <= 2 * np.sqrt(2 / 12800) / 0.87962566103423978 + 1e-6


def test_forward_rejects_wrong_input_shape():
    model = nn.Model(small_spec())
    with pytest.raises(DimensionError):
        model.forward(np.zeros((1, 5, 5, 2), np.float32))
