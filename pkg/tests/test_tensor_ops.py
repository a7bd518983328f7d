import math

import numpy as np
import pytest

from avfuse.errors import ShapeError
from avfuse.tensornet import (
    Tensor,
    backward,
    bce_loss,
    concat,
    matmul,
    mean,
    mul,
    relu,
    sigmoid,
    tsum,
)

from gradcheck import max_rel_error, numerical_grads

TOL = 1e-4


def scalar_loss(out: Tensor, proj: np.ndarray) -> Tensor:
    return tsum(mul(out, Tensor(proj)))


def check_op(build, *arrays, seed=0):
    """Compare backward() grads against finite differences for `build(*tensors)`."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    proj = rng.normal(size=build(*tensors).shape)

    def run() -> float:
        return float(scalar_loss(build(*tensors), proj).data)

    loss = scalar_loss(build(*tensors), proj)
    backward(loss)
    numeric = numerical_grads(run, [t.data for t in tensors])
    for t, n in zip(tensors, numeric):
        assert max_rel_error(t.grad, n) < TOL


def test_relu_values():
    out = relu(Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_sigmoid_at_zero():
    assert sigmoid(Tensor([0.0])).data[0] == 0.5


def test_sigmoid_grad_at_zero():
    x = Tensor([0.0], requires_grad=True)
    backward(tsum(sigmoid(x)))
    assert abs(x.grad[0] - 0.25) < 1e-12


def test_relu_subgradient_zero_at_kink():
    x = Tensor([0.0], requires_grad=True)
    backward(tsum(relu(x)))
    assert x.grad[0] == 0.0


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_dense_weight_grad_is_outer_product():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(1, 4)))
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    up = rng.normal(size=(1, 3))
    backward(tsum(mul(matmul(x, w), Tensor(up))))
    np.testing.assert_allclose(w.grad, np.outer(x.data[0], up[0]), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_elementwise_and_matmul_grads(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    check_op(lambda t, u: t * u + t - u, a, b, seed=seed)
    check_op(lambda t, u: t / (u * u + 3.0), a, b, seed=seed)
    c = rng.normal(size=(4, 2))
    check_op(lambda t, u: matmul(t, u), a, c, seed=seed)


def test_broadcast_bias_grad():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3))
    bias = rng.normal(size=(3,))
    check_op(lambda t, u: t + u, x, bias)


def test_concat_grads():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 5))
    check_op(lambda t, u: concat([t, u], axis=1), a, b)


def test_mean_axis_grads():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(4, 6))
    check_op(lambda t: mean(t, axis=1), a)
    check_op(lambda t: mean(t), a)


def test_one_minus_alpha_grads():
    rng = np.random.default_rng(5)
    a = rng.uniform(0.1, 0.9, size=(3, 4))
    check_op(lambda t: 1.0 - t, a)


def test_backward_without_tape_raises():
    x = Tensor(np.zeros(1))
    with pytest.raises(RuntimeError, match="tape"):
        backward(tsum(x))


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x + 1.0)


def test_shared_subgraph_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x  # dy/dx = 2x = 4
    backward(tsum(y + y))
    assert abs(x.grad[0] - 8.0) < 1e-12


class TestBce:
    def test_perfect_prediction_near_zero(self):
        loss = bce_loss(Tensor([1.0 - 1e-7]), np.array([1.0]))
        assert 0.0 <= float(loss.data) <= 2e-7

    def test_half_prediction_is_ln2(self):
        loss = bce_loss(Tensor([0.5]), np.array([1.0]))
        assert abs(float(loss.data) - math.log(2.0)) < 1e-12

    def test_mean_over_classes(self):
        loss = bce_loss(Tensor([0.5, 0.5]), np.array([1.0, 0.0]))
        assert abs(float(loss.data) - math.log(2.0)) < 1e-12

    def test_batch_and_class_mean_matches_hand_sum(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.1, 0.9, size=(4, 3))
        y = (rng.random((4, 3)) < 0.5).astype(float)
        expected = np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p)))
        assert abs(float(bce_loss(Tensor(p), y).data) - expected) < 1e-12

    def test_rejects_nonbinary_targets(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor([0.5]), np.array([0.3]))

    def test_nonnegative_and_positive_when_wrong(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(1e-6, 1 - 1e-6, size=50)
        y = (rng.random(50) < 0.5).astype(float)
        assert float(bce_loss(Tensor(p), y).data) > 0.0

    def test_gradient(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(0.1, 0.9, size=(3, 4))
        y = (rng.random((3, 4)) < 0.5).astype(float)
        t = Tensor(p.copy(), requires_grad=True)

        def run() -> float:
            return float(bce_loss(t, y).data)

        backward(bce_loss(t, y))
        (numeric,) = numerical_grads(run, [t.data])
        assert max_rel_error(t.grad, numeric) < TOL

    def test_gradient_through_sigmoid(self):
        rng = np.random.default_rng(8)
        z = rng.uniform(-2.0, 2.0, size=(4, 3))
        y = (rng.random((4, 3)) < 0.5).astype(float)
        t = Tensor(z.copy(), requires_grad=True)

        def run() -> float:
            return float(bce_loss(sigmoid(t), y).data)

        backward(bce_loss(sigmoid(t), y))
        (numeric,) = numerical_grads(run, [t.data])
        assert max_rel_error(t.grad, numeric) < TOL
