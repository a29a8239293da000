import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from drive import numerics as nx
from drive.distributions import entropy
from drive.models import DenseNet
from drive.numerics import Tape, Tensor, backward, grad_check, grad_check_params


def test_softmax_of_equal_logits_is_uniform():
    out = nx.softmax(np.zeros(3)).data
    assert np.allclose(out, 1 / 3, atol=1e-15)


def test_matmul_identity():
    m = np.array([[1.5, -2.0], [0.25, 7.0]])
    assert np.array_equal((Tensor(np.eye(2)) @ Tensor(m)).data, m)


def test_log_softmax_large_logits_matches_shifted_reference():
    out = nx.log(nx.softmax(np.array([1000.0, 0.0]))).data
    # reference: the same expression evaluated on logits shifted by their max
    z = np.array([0.0, -1000.0])
    ref = z - np.log(np.sum(np.exp(z)))
    assert np.all(np.isfinite(out))
    assert abs(out[0]) < 1e-12
    # second entry sits on the log floor rather than at -1000
    assert out[1] == pytest.approx(max(ref[1], np.log(nx.LOG_FLOOR)))


def test_matmul_shape_error_names_op_and_shapes():
    with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_add_shape_error():
    with pytest.raises(ValueError, match="add"):
        nx.add(np.ones((2, 3)), np.ones((4, 5)))


def test_backward_quadratic():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        root = (w * w).sum()
    assert np.array_equal(tape.backward(root)[w], [2.0, 4.0])


def test_backward_module_function_uses_active_tape():
    w = Tensor([3.0], requires_grad=True)
    with Tape():
        root = (w * w).sum()
        g = backward(root)
    assert g[w][0] == 6.0


def test_constant_root_gives_zero_gradients():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        root = (w * w).sum()
        const = Tensor(5.0)
        tape.record("const", [], const, lambda g: ())
    g = tape.backward(const)
    assert np.array_equal(g[w], [0.0, 0.0])
    assert root.item() == 5.0


def test_backward_rejects_non_scalar_root():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = w * w
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_backward_rejects_root_not_on_tape():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        pass
    with Tape() as other:
        (w * w).sum()
    stray = Tensor(1.0)
    with pytest.raises(ValueError, match="tape"):
        other.backward(stray)


def test_unreached_leaf_gets_zero():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        root = (a * a).sum()
    assert np.array_equal(tape.backward(root)[b], [0.0, 0.0])


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(3)
    net = DenseNet([4, 6, 3], rng)
    X = rng.normal(size=(5, 4))
    target = np.eye(3)[rng.integers(3, size=5)]

    def loss():
        return -(nx.log(net.predict(X)[1]) * target).sum()

    errs = grad_check_params(loss, net.params)
    assert max(errs.values()) < 1e-5


def test_grad_check_square():
    assert grad_check(lambda x: x * x, 3.0) < 1e-7


def test_grad_check_entropy_of_softmax():
    x = np.random.default_rng(0).normal(size=4)
    assert grad_check(lambda t: entropy(nx.softmax(t)), x) < 1e-5


def test_grad_check_constant_function():
    assert grad_check(lambda t: Tensor(2.0), np.ones(3)) <= 1e-10


def test_grad_check_non_finite_raises():
    with pytest.raises(FloatingPointError):
        grad_check(lambda t: nx.exp(t * 1e6).sum(), np.ones(2))


@pytest.mark.parametrize("seed", range(20))
def test_composed_ops_grad_check(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 4))
    idx = rng.integers(4, size=(3, 2))

    def f(x):
        p = nx.softmax(nx.tanh(x @ A.T))
        picked = nx.take_rows(nx.softmax(x), idx)
        return (nx.log(p) * p).mean() + nx.prod_rows(picked).sum() + nx.exp(nx.scale(x, 0.1)).sum()

    assert grad_check(f, rng.normal(size=(3, 4))) < 1e-5


def test_reduce_and_transpose_grads():
    x = np.random.default_rng(1).normal(size=(3, 2))
    assert grad_check(lambda t: (t.T.sum(axis=0) * t.mean(axis=1)).sum(), x) < 1e-5


@given(a=st.floats(-3, 3), b=st.floats(-3, 3),
       x=arrays(np.float64, 4, elements=st.floats(-2, 2)))
def test_backward_is_linear(a, b, x):
    def grads(fn):
        t = Tensor(x, requires_grad=True)
        with Tape() as tape:
            root = fn(t)
        return tape.backward(root)[t]

    def f(t):
        return nx.tanh(t).sum()

    def g(t):
        return (t * t * t).sum()

    combo = grads(lambda t: nx.scale(f(t), a) + nx.scale(g(t), b))
    assert np.allclose(combo, a * grads(f) + b * grads(g), atol=1e-10, rtol=0)


@given(arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)))
def test_public_ops_stay_finite_on_domain(x):
    p = nx.softmax(x)
    assert np.all(np.isfinite(nx.log(p).data))
    assert np.allclose(p.data.sum(axis=1), 1.0)
    assert np.all(np.isfinite(nx.tanh(x).data))


def test_log_floor_has_zero_derivative_below_floor():
    x = Tensor([0.0, 0.5], requires_grad=True)
    with Tape() as tape:
        root = nx.log(x).sum()
    g = tape.backward(root)[x]
    assert g[0] == 0.0 and g[1] == pytest.approx(2.0)


def test_gradient_accumulation_is_deterministic():
    rng = np.random.default_rng(9)
    net = DenseNet([3, 5, 2], rng)
    X = rng.normal(size=(4, 3))

    def run():
        with Tape() as tape:
            root = net.predict(X)[1].sum(axis=0).mean() + (net.forward(X) * net.forward(X)).sum()
        g = tape.backward(root)
        return [g[p].tobytes() for p in net.params]

    assert run() == run()
