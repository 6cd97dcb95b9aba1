import numpy as np
import pytest

from msadnet import ops
from msadnet.tensor import Tensor, is_grad_enabled, no_grad, resolve_dtype

from conftest import var


def test_fan_out_accumulates():
    x = var([1.0, 2.0])
    y = ops.mul(x, x)  # x used twice in one op
    z = ops.add(y, x)
    z.backward(np.ones(2))
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_repeated_backward_sums():
    x = var([3.0])
    ops.tensor_sum(ops.mul(x, x)).backward()
    ops.tensor_sum(ops.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_intermediates_receive_grad():
    x = var(np.ones((1, 2, 2, 2)))
    h = ops.relu(x)
    ops.global_avg_pool(h).backward(np.ones((1, 2)))
    np.testing.assert_allclose(h.grad, 0.25)


def test_no_grad_builds_no_tape():
    x = var([1.0])
    with no_grad():
        assert not is_grad_enabled()
        y = ops.mul(x, x)
    assert is_grad_enabled()
    assert y._node is None and not y.requires_grad


def test_backward_contracts():
    with pytest.raises(RuntimeError):
        Tensor(np.ones(2)).backward()
    y = ops.mul(var([1.0, 2.0]), var([3.0, 4.0]))
    with pytest.raises(RuntimeError, match="scalar"):
        y.backward()


def test_constant_inputs_get_no_grad():
    x, c = var([2.0]), Tensor(np.array([5.0]))
    ops.mul(x, c).backward(np.ones(1))
    assert c.grad is None
    np.testing.assert_allclose(x.grad, [5.0])


def test_dtype_resolution():
    assert resolve_dtype("float64") == np.float64
    assert resolve_dtype("float32") == np.float32
    with pytest.raises(ValueError):
        resolve_dtype("float16")
    assert Tensor([1, 2]).dtype == np.float64


def test_check_finite():
    with pytest.raises(FloatingPointError):
        Tensor(np.array([1.0, np.nan]), name="w").check_finite()
