import math

import numpy as np
import pytest

from msadnet.optim import Adam, Schedule, lr_at
from msadnet.tensor import Tensor


def test_adaptive_schedule_values():
    s = Schedule("adaptive", 1e-4, 7, 0.95, 35)
    for e in range(1, 8):
        assert lr_at(s, e) == 1e-4
    assert lr_at(s, 8) == pytest.approx(9.5e-5, rel=1e-15)
    assert lr_at(s, 35) == 1e-4 * 0.95**28


def test_fixed_schedule_is_constant():
    s = Schedule("fixed", 3e-4)
    assert {lr_at(s, e) for e in range(1, 36)} == {3e-4}


def test_schedule_contracts():
    with pytest.raises(ValueError):
        lr_at(Schedule(), 0)
    with pytest.raises(ValueError):
        Schedule("cosine")
    with pytest.raises(ValueError):
        Schedule(decay=0.0)


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar textbook loop, one element at a time."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(theta)
    return out


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    start = rng.standard_normal(5)
    grads = rng.standard_normal((6, 5))
    p = Tensor(start.copy(), requires_grad=True)
    opt = Adam([p])
    for step in range(6):
        p.grad = grads[step].copy()
        opt.step(1e-3)
        for i in range(5):
            assert p.data[i] == pytest.approx(reference_adam(start[i], grads[: step + 1, i], 1e-3)[-1], abs=1e-15)


def test_adam_first_step_is_lr_times_sign():
    p = Tensor(np.zeros(3), requires_grad=True)
    p.grad = np.array([2.0, -0.5, 0.0])
    Adam([p]).step(0.01)
    np.testing.assert_allclose(p.data, [-0.01, 0.01, 0.0], rtol=1e-6)


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([p])
    for _ in range(2000):
        p.grad = 2 * p.data
        opt.step(0.05)
    assert np.abs(p.data).max() < 1e-2


def test_non_finite_gradient_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True, name="b4.s1.conv3x3.kernel")
    p.grad = np.array([np.nan, 1.0])
    with pytest.raises(FloatingPointError, match="b4.s1.conv3x3.kernel"):
        Adam([p]).step(1e-3)
    np.testing.assert_array_equal(p.data, 0.0)


def test_missing_gradient_is_zero():
    p = Tensor(np.ones(2), requires_grad=True)
    Adam([p]).step(1.0)
    np.testing.assert_array_equal(p.data, 1.0)
