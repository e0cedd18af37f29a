"""Autodiff correctness against central finite differences."""

import numpy as np
import pytest

from worldflow.nn import Tensor, concatenate, no_grad, softmax, stack, take
from worldflow.nn.gradcheck import check_gradients


def _t(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)


def test_add_broadcast_grad():
    rng = np.random.default_rng(0)
    a, b = _t(rng, 3, 4), _t(rng, 4)
    check_gradients(lambda p: ((p[0] + p[1]) * (p[0] + p[1])).sum(), [a, b])


def test_mul_div_grad():
    rng = np.random.default_rng(1)
    a, b = _t(rng, 2, 5), _t(rng, 2, 5)
    b.data += 3.0  # keep divisor away from zero
    check_gradients(lambda p: (p[0] * p[1] / (p[1] + 5.0)).sum(), [a, b])


def test_matmul_grad_batched():
    rng = np.random.default_rng(2)
    a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    check_gradients(lambda p: ((p[0] @ p[1]) ** 2.0).sum(), [a, b])
    c, d = _t(rng, 2, 3, 4), _t(rng, 2, 4, 3)
    check_gradients(lambda p: ((p[0] @ p[1]) ** 2.0).sum(), [c, d])


def test_reshape_swapaxes_grad():
    rng = np.random.default_rng(3)
    a = _t(rng, 2, 3, 4)
    check_gradients(lambda p: (p[0].reshape(6, 4).swapaxes(0, 1) ** 2.0).sum(), [a])


def test_getitem_grad():
    rng = np.random.default_rng(4)
    a = _t(rng, 5, 4)
    check_gradients(lambda p: (p[0][1:4, ::2] ** 2.0).sum(), [a])


def test_reduction_grads():
    rng = np.random.default_rng(5)
    a = _t(rng, 3, 4, 2)
    check_gradients(lambda p: (p[0].mean(axis=(0, 2)) ** 2.0).sum(), [a])
    check_gradients(lambda p: p[0].sum(axis=1, keepdims=True).mean(), [a])


@pytest.mark.parametrize("op", ["exp", "tanh", "sigmoid", "softplus", "gelu", "silu"])
def test_pointwise_grads(op):
    rng = np.random.default_rng(6)
    a = _t(rng, 3, 3)
    check_gradients(lambda p: (getattr(p[0], op)() ** 2.0).sum(), [a])


def test_log_sqrt_grads():
    rng = np.random.default_rng(7)
    a = _t(rng, 4)
    a.data = np.abs(a.data) + 0.5
    check_gradients(lambda p: (p[0].log() + p[0].sqrt()).sum(), [a])


def test_clip_grad_interior_only():
    a = Tensor(np.array([-2.0, 0.3, 2.0]), requires_grad=True, dtype=np.float64)
    y = a.clip(-1.0, 1.0).sum()
    y.backward()
    assert np.allclose(a.grad, [0.0, 1.0, 0.0])


def test_concatenate_stack_take_grads():
    rng = np.random.default_rng(8)
    a, b = _t(rng, 2, 3), _t(rng, 2, 2)
    check_gradients(lambda p: (concatenate([p[0], p[1]], axis=1) ** 2.0).sum(), [a, b])
    c, d = _t(rng, 3, 2), _t(rng, 3, 2)
    check_gradients(lambda p: (stack([p[0], p[1]], axis=0) ** 3.0).sum(), [c, d])
    e = _t(rng, 5, 3)
    idx = np.array([0, 2, 2, 4])  # repeated row: grads must accumulate
    check_gradients(lambda p: (take(p[0], idx, axis=0) ** 2.0).sum(), [e])


def test_softmax_rows_sum_to_one_and_grad():
    rng = np.random.default_rng(9)
    a = _t(rng, 4, 6)
    s = softmax(a, axis=-1)
    assert np.allclose(s.data.sum(axis=-1), 1.0)
    check_gradients(lambda p: (softmax(p[0], axis=-1) * np.arange(6.0)).sum(), [a])


def test_grad_accumulates_on_reuse():
    a = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    y = a * a + a  # dy/da = 2a + 1 = 5
    y.backward()
    assert np.allclose(a.grad, [5.0])


def test_no_grad_blocks_tape():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (a * 2.0).sum()
    assert not y.requires_grad


def test_backward_requires_scalar():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (a * 2.0).backward()


def test_float32_default_dtype():
    t = Tensor([1, 2, 3])
    assert t.dtype == np.float32
