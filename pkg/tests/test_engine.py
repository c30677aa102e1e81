import numpy as np
import pytest

from endoneus import engine as E


def fd_check(fn, x, eps=1e-6, tol=1e-7):
    """Compare the tape gradient of sum(w * fn(x)) against central differences."""
    rng = np.random.default_rng(0)
    w = rng.normal(size=np.shape(fn(E.as_tensor(x)).value))
    leaf = E.parameter(x.copy())
    out = E.tsum(fn(leaf) * w)
    E.backward(out)
    num = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        num[i] = (np.sum(fn(E.as_tensor(xp)).value * w) - np.sum(fn(E.as_tensor(xm)).value * w)) / (2 * eps)
    np.testing.assert_allclose(leaf.grad, num, rtol=tol, atol=tol)


X = np.random.default_rng(1).normal(size=(4, 3))
POS = np.abs(X) + 0.5
W = np.random.default_rng(2).normal(size=(3, 5))


@pytest.mark.parametrize("fn,x", [
    (lambda a: a + 2.0 * a, X),
    (lambda a: a - a * a, X),
    (lambda a: a / (1.0 + a * a), X),
    (lambda a: E.square(a), X),
    (lambda a: E.power(a, 3), X),
    (lambda a: E.exp(a), X),
    (lambda a: E.log(a), POS),
    (lambda a: E.sqrt(a), POS),
    (lambda a: E.absolute(a), X),
    (lambda a: E.relu(a), X),
    (lambda a: E.sigmoid(a * 3.0), X),
    (lambda a: E.softplus(a, 5.0), X),
    (lambda a: E.softplus(a, 5.0, with_slope=True)[1], X),
    (lambda a: E.where(X > 0, a, 2.0 * a), X),
    (lambda a: E.tsum(a, axis=0), X),
    (lambda a: E.mean(a, axis=1, keepdims=True), X),
    (lambda a: E.norm(a, axis=-1), X),
    (lambda a: E.reshape(a, (3, 4)), X),
    (lambda a: E.transpose(a), X),
    (lambda a: a[1:3, ::2], X),
    (lambda a: a[np.array([0, 0, 2])], X),
    (lambda a: E.concat([a, a * 2.0], axis=-1), X),
    (lambda a: E.matmul(a, W), X),
    (lambda a: E.matmul(W.T, a.T * 1.0), X),
])
def test_op_gradients(fn, x):
    fd_check(fn, x)


def test_matmul_weight_gradient():
    a = E.parameter(X.copy())
    w = E.parameter(W.copy())
    E.backward(E.tsum(E.matmul(a, w)))
    np.testing.assert_allclose(w.grad, X.T @ np.ones((4, 5)))
    np.testing.assert_allclose(a.grad, np.ones((4, 5)) @ W.T)


def test_broadcast_gradients_reduce():
    a = E.parameter(np.ones((4, 3)))
    b = E.parameter(np.array([1.0, 2.0, 3.0]))
    E.backward(E.tsum(a * b))
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])
    np.testing.assert_array_equal(a.grad, np.tile([1.0, 2.0, 3.0], (4, 1)))


def test_stop_gradient_blocks_flow():
    a = E.parameter(np.array([2.0]))
    E.backward(E.tsum(a * E.stop_gradient(a)))
    np.testing.assert_array_equal(a.grad, [2.0])


def test_shared_subexpression_accumulates():
    a = E.parameter(np.array([3.0]))
    b = a * a
    E.backward(E.tsum(b + b))
    np.testing.assert_array_equal(a.grad, [12.0])


def test_norm_zero_has_zero_gradient():
    a = E.parameter(np.zeros((1, 3)))
    E.backward(E.tsum(E.norm(a)))
    np.testing.assert_array_equal(a.grad, np.zeros((1, 3)))


def test_softplus_matches_logaddexp():
    x = np.linspace(-3, 3, 20001)
    for beta in (1.0, 100.0):
        ref = np.logaddexp(0.0, beta * x) / beta
        assert np.max(np.abs(E.softplus(x, beta).value - ref)) < 1e-15
        ref32 = ref.astype(np.float32)
        got32 = E.softplus(x.astype(np.float32), beta).value
        assert got32.dtype == np.float32
        # about one float32 ulp at 1; max(x, 0) and the log term partly cancel
        np.testing.assert_allclose(got32, ref32, rtol=2.5e-7, atol=1.5e-7)
    _, slope = E.softplus(x, 100.0, with_slope=True)
    np.testing.assert_allclose(slope.value, 1 / (1 + np.exp(-100 * x)), atol=1e-15)


def test_sigmoid_extremes_are_finite():
    v = E.sigmoid(np.array([-1e4, 0.0, 1e4])).value
    assert np.all(np.isfinite(v))
    # the exp floor of e^-30 bounds saturation at ~1e-13
    assert 0 < v[0] < 1e-12 and v[1] == 0.5 and 0 < 1 - v[2] < 1e-12


def test_float32_preserved_with_python_scalars():
    a = E.parameter(np.ones(3, dtype=np.float32))
    out = E.softplus(a * 2.0 + 1.0, 100.0) / 3.0
    assert out.value.dtype == np.float32


def test_nonfinite_loss_raises():
    a = E.parameter(np.array([0.0]))
    with pytest.raises(E.NumericalError), np.errstate(divide="ignore"):
        E.backward(E.tsum(E.log(a)))
