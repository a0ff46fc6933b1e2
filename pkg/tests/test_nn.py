import numpy as np
import pytest

from timerec import nn


def test_sigmoid_tanh_analytic_values():
    assert nn.sigmoid(np.array([0.0]))[0] == 0.5
    assert nn.tanh(np.array([0.0]))[0] == 0.0


def test_sigmoid_extreme_inputs_do_not_overflow():
    out = nn.sigmoid(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0, abs=1e-12)
    assert out[1] == pytest.approx(1.0, abs=1e-12)


def test_softmax_symmetry_and_normalization():
    out = nn.softmax(np.array([0.0, 0.0]))
    assert np.allclose(out, [0.5, 0.5])
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(scale=10.0, size=rng.integers(2, 30))
        y = nn.softmax(x)
        assert np.all(y >= 0)
        assert abs(y.sum() - 1.0) <= 1e-6


def test_softmax_large_magnitudes_stable():
    y = nn.softmax(np.array([1e8, 1e8 + 1.0, -1e8]))
    assert np.all(np.isfinite(y))
    assert abs(y.sum() - 1.0) <= 1e-6


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 2))
    expected = np.zeros((4, 2))
    for i in range(4):
        for j in range(2):
            for k in range(3):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(nn.matmul(a, b) - expected)) <= 1e-12


def test_shape_errors_name_shapes_and_op():
    with pytest.raises(nn.ShapeError, match=r"matmul.*\(4, 3\).*\(2, 2\)"):
        nn.matmul(np.zeros((4, 3)), np.zeros((2, 2)))
    with pytest.raises(nn.ShapeError, match="elementwise_mul"):
        nn.elementwise_mul(np.zeros(3), np.zeros(4))
    with pytest.raises(nn.ShapeError, match="add_bias"):
        nn.add_bias(np.zeros((2, 3)), np.zeros(4))


def test_dropout_identities():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 7))
    out, mask = nn.dropout(x, 0.0, train=True, rng=rng)
    assert out is x and mask is None
    out, mask = nn.dropout(x, 0.9, train=False)
    assert out is x and mask is None


def test_dropout_train_scaling():
    rng = np.random.default_rng(3)
    x = np.ones((200, 50))
    out, mask = nn.dropout(x, 0.25, train=True, rng=rng)
    kept = out[out != 0.0]
    assert np.allclose(kept, 1.0 / 0.75)
    assert abs((out != 0).mean() - 0.75) < 0.02
    grad = nn.dropout_backward(np.ones_like(x), mask)
    assert np.array_equal(grad, mask)


def test_adam_zero_grad_leaves_value():
    p = nn.Parameter("w", np.array([1.0, -2.0]))
    nn.adam_step(p, lr=0.001, l2=0.0)
    assert np.array_equal(p.value, [1.0, -2.0])


def test_adam_first_step_magnitude():
    # fresh state, grad 1.0: m_hat = v_hat = 1, step is lr / (1 + eps)
    p = nn.Parameter("w", np.array([0.5]))
    p.grad[...] = 1.0
    nn.adam_step(p, lr=0.001, l2=0.0)
    assert p.value[0] == pytest.approx(0.5 - 0.000999999990, abs=1e-12)


def test_adam_lr_zero_is_identity():
    rng = np.random.default_rng(4)
    p = nn.Parameter("w", rng.normal(size=(3, 3)))
    before = p.value.copy()
    p.grad[...] = rng.normal(size=(3, 3))
    nn.adam_step(p, lr=0.0)
    assert np.array_equal(p.value, before)


def test_adam_runs_are_bit_identical():
    def run():
        rng = np.random.default_rng(5)
        p = nn.Parameter("w", rng.normal(size=8))
        for _ in range(20):
            p.grad[...] = rng.normal(size=8)
            nn.adam_step(p, lr=0.01)
        return p.value
    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_grad():
    p = nn.Parameter("w", np.zeros(2))
    p.grad[...] = [np.nan, 0.0]
    with pytest.raises(nn.DivergenceError, match="'w'"):
        nn.adam_step(p, lr=0.001)


def test_parameter_store_rejects_duplicates():
    store = nn.ParameterStore()
    store.add("a", np.zeros(2))
    with pytest.raises(ValueError, match="duplicate"):
        store.add("a", np.zeros(2))


def test_fd_check_linear_function():
    store = nn.ParameterStore()
    rng = np.random.default_rng(6)
    for name in ("a", "b"):
        store.add(name, rng.normal(size=(4, 5)))

    def f():
        return float(sum(p.value.sum() for p in store))

    for p in store:
        p.grad[...] = 1.0
    report = nn.finite_difference_check(f, store, rng=np.random.default_rng(0))
    assert report.max_rel_error < 1e-8


def test_fd_check_sigmoid_derivative():
    store = nn.ParameterStore()
    p = store.add("x", np.array([0.37]))

    def f():
        return float(nn.sigmoid(p.value)[0])

    s = nn.sigmoid(p.value)[0]
    p.grad[...] = s * (1.0 - s)
    report = nn.finite_difference_check(f, store, rng=np.random.default_rng(0))
    assert report.max_rel_error <= 1e-6


def test_fd_check_names_failing_parameter():
    store = nn.ParameterStore()
    p = store.add("bad_param", np.array([1.0, 2.0]))

    def f():
        return float(p.value.sum())

    p.grad[...] = [1.0, 5.0]  # wrong on coordinate 1
    with pytest.raises(nn.GradientCheckError, match="bad_param"):
        nn.finite_difference_check(f, store, tolerance=1e-4, rng=np.random.default_rng(0))


def _fd_via_store(value, forward, backward_grad, seed=0):
    """FD-check one primitive: scalar objective = weighted sum of its output."""
    store = nn.ParameterStore()
    p = store.add("x", np.asarray(value, dtype=np.float64))
    rng = np.random.default_rng(seed)
    out = forward(p.value)
    proj = rng.normal(size=out.shape)

    def f():
        return float((forward(p.value) * proj).sum())

    p.grad[...] = backward_grad(p.value, proj)
    report = nn.finite_difference_check(f, store, rng=np.random.default_rng(1))
    assert report.max_rel_error <= 1e-4, str(report)


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "softmax", "mean", "matmul",
                                  "elementwise", "concat", "add_bias"])
def test_primitive_backwards_pass_fd(name):
    rng = np.random.default_rng(7)
    if name == "sigmoid":
        _fd_via_store(rng.normal(size=6),
                      nn.sigmoid,
                      lambda x, g: nn.sigmoid_backward(g, nn.sigmoid(x)))
    elif name == "tanh":
        _fd_via_store(rng.normal(size=6),
                      nn.tanh,
                      lambda x, g: nn.tanh_backward(g, nn.tanh(x)))
    elif name == "softmax":
        _fd_via_store(rng.normal(size=6),
                      nn.softmax,
                      lambda x, g: nn.softmax_backward(g, nn.softmax(x)))
    elif name == "mean":
        _fd_via_store(rng.normal(size=(3, 4)),
                      lambda x: np.asarray(nn.mean(x)),
                      lambda x, g: nn.mean_backward(g, x.shape))
    elif name == "matmul":
        other = rng.normal(size=(5, 3))
        _fd_via_store(rng.normal(size=(4, 5)),
                      lambda x: nn.matmul(x, other),
                      lambda x, g: nn.matmul_backward(g, x, other)[0])
    elif name == "elementwise":
        other = rng.normal(size=7)
        _fd_via_store(rng.normal(size=7),
                      lambda x: nn.elementwise_mul(x, other),
                      lambda x, g: nn.elementwise_mul_backward(g, x, other)[0])
    elif name == "concat":
        other = rng.normal(size=4)
        _fd_via_store(rng.normal(size=3),
                      lambda x: nn.concat([x, other]),
                      lambda x, g: nn.concat_backward(g, [3, 4])[0])
    elif name == "add_bias":
        x = rng.normal(size=(3, 4))
        _fd_via_store(rng.normal(size=4),
                      lambda b: nn.add_bias(x, b),
                      lambda b, g: nn.add_bias_backward(g)[1])
