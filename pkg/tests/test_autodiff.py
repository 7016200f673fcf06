import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from powergnn import autodiff as ad
from powergnn.autodiff import Tape, Tensor


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        up = f(x)
        x[i] = old - eps
        dn = f(x)
        x[i] = old
        g[i] = (up - dn) / (2 * eps)
    return g


def grad_of(build, *values):
    leaves = [Tensor(v.copy(), requires_grad=True) for v in values]
    with Tape() as tape:
        loss = build(*leaves)
    tape.backward(loss)
    return [leaf.grad for leaf in leaves]


finite = st.floats(-3, 3, allow_nan=False)


class TestOps:
    @pytest.mark.parametrize("op", [
        lambda a, b: ad.tsum(ad.mul(a, b)),
        lambda a, b: ad.tsum(ad.square(ad.sub(a, b))),
        lambda a, b: ad.tsum(ad.sigmoid(ad.add(a, b))),
        lambda a, b: ad.tsum(ad.relu(ad.mul(a, b)) * 2.0),
    ])
    def test_elementwise_against_fd(self, op, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        ga, gb = grad_of(op, a, b)
        f = lambda x: float(op(Tensor(x), Tensor(b)).value)
        assert np.allclose(ga, numeric_grad(f, a.copy()), atol=1e-6)
        f = lambda x: float(op(Tensor(a), Tensor(x)).value)
        assert np.allclose(gb, numeric_grad(f, b.copy()), atol=1e-6)

    def test_broadcast_add_sums_gradient(self, rng):
        x, bias = rng.normal(size=(5, 3)), rng.normal(size=(3,))
        _, gb = grad_of(lambda x, b: ad.tsum(ad.square(x + b)), x, bias)
        assert np.allclose(gb, (2 * (x + bias)).sum(axis=0))

    def test_batched_matmul(self, rng):
        A, W = rng.normal(size=(2, 4, 3)), rng.normal(size=(3, 2))
        gA, gW = grad_of(lambda A, W: ad.tsum(ad.square(A @ W)), A, W)
        f = lambda w: float((np.square(A @ w)).sum())
        assert np.allclose(gW, numeric_grad(f, W.copy()), atol=1e-5)
        f = lambda a: float((np.square(a @ W)).sum())
        assert np.allclose(gA, numeric_grad(f, A.copy()), atol=1e-5)

    def test_sum_axis_and_reshape(self, rng):
        x = rng.normal(size=(2, 3, 4))
        (g,) = grad_of(lambda x: ad.tsum(ad.square(ad.reshape(x.sum(axis=1, keepdims=True), (2, 4)))), x)
        expect = np.broadcast_to(2 * x.sum(axis=1, keepdims=True), x.shape)
        assert np.allclose(g, expect)

    def test_numpy_left_operand_defers_to_tensor(self, rng):
        w = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
        y = rng.normal(size=(4, 3)) @ w
        assert isinstance(y, Tensor) and y.shape == (4, 1)
        z = np.ones((3, 1)) * w
        assert isinstance(z, Tensor)

    def test_plain_arrays_skip_the_tape(self):
        assert isinstance(ad.relu(np.array([-1.0, 2.0])), np.ndarray)
        assert ad.sigmoid(np.zeros(2)).tolist() == [0.5, 0.5]

    @given(arrays(float, (4,), elements=st.floats(-30, 30)))
    def test_sigmoid_range_and_derivative(self, x):
        (g,) = grad_of(lambda t: ad.tsum(ad.sigmoid(t)), x)
        y = ad.sigmoid(x)
        assert np.all((y >= 0) & (y <= 1))
        assert np.allclose(g, y * (1 - y))


class TestTape:
    def test_shared_leaf_accumulates(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        with Tape() as tape:
            loss = ad.tsum(w * 3.0 + w * w)
        tape.backward(loss)
        assert w.grad.tolist() == [3.0 + 4.0]

    def test_constant_loss_zero_gradients(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            _ = w * 2.0
            loss = ad.tsum(Tensor(np.ones(3)))
        tape.backward(loss)
        assert np.array_equal(w.grad, np.zeros(3))

    def test_detached_loss(self):
        w = Tensor(np.ones(2), requires_grad=True)
        loss = ad.tsum(w * 2.0)
        with Tape() as tape:
            _ = w * 1.0
        with pytest.raises(ad.DetachedTapeError):
            tape.backward(loss)

    def test_non_scalar_loss(self):
        with Tape() as tape:
            y = Tensor(np.ones(2), requires_grad=True) * 2.0
        with pytest.raises(ValueError):
            tape.backward(y)

    def test_dense_quadratic_hand_formula(self, rng):
        # L = ||X W + b - Y||^2 / n  =>  dW = 2 X^T R / n, db = 2 sum(R) / n
        X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
        W, b = rng.normal(size=(3, 2)), rng.normal(size=(2,))
        gW, gb = grad_of(lambda W, b: ad.square(X @ W + b - Y).mean(), W, b)
        R = X @ W + b - Y
        assert np.allclose(gW, 2 * X.T @ R / R.size)
        assert np.allclose(gb, 2 * R.sum(axis=0) / R.size)

    def test_repeated_backward_is_idempotent(self):
        w = Tensor(np.array([1.5]), requires_grad=True)
        with Tape() as tape:
            loss = ad.tsum(ad.square(w))
        tape.backward(loss)
        tape.backward(loss)
        assert w.grad.tolist() == [3.0]
