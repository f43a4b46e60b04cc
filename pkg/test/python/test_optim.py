"""Test the AdamW optimizer and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np
import pytest

from gms import tensor as T
from gms.errors import ConfigurationError, DimensionError, UsageError
from gms.optim import AdamW, AdamWState, CosineSchedule, adamw_step, cosine_lr
from gms.tensor import Tensor


@pytest.mark.usefixtures("float64")
def test_first_step_by_hand() -> None:
    """Test the first update against the closed form: bias correction makes it lr * (sign(g) + wd * theta)."""
    theta = Tensor([1.0, -2.0], requires_grad=True)
    grad = Tensor([0.5, -0.25])
    state = AdamWState(weight_decay=0.01)
    adamw_step({"theta": theta}, {theta.uid: grad}, state, lr=0.1)
    expected = [
        1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0),
        -2.0 - 0.1 * (-0.25 / (0.25 + 1e-8) + 0.01 * -2.0),
    ]
    np.testing.assert_allclose(theta.data, expected, rtol=0, atol=1e-12)
    assert state.t == 1
    np.testing.assert_allclose(state.m["theta"], [0.05, -0.025])
    np.testing.assert_allclose(state.v["theta"], [0.001 * 0.25, 0.001 * 0.0625])


@pytest.mark.usefixtures("float64")
def test_second_step_uses_moments() -> None:
    """Test the bias-corrected update after two steps with a constant gradient."""
    theta = Tensor([0.0], requires_grad=True)
    opt = AdamW({"theta": theta}, lr=0.01, weight_decay=0.0)
    for _ in range(2):
        opt.step({theta.uid: Tensor([2.0])})
    m_hat = (0.1 * 2.0 * 0.9 + 0.1 * 2.0) / (1 - 0.9**2)
    v_hat = (0.001 * 4.0 * 0.999 + 0.001 * 4.0) / (1 - 0.999**2)
    second = 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8)
    first = 0.01 * 2.0 / (2.0 + 1e-8)
    np.testing.assert_allclose(theta.data, [-(first + second)], rtol=1e-12)


def test_frozen_parameters_are_untouched() -> None:
    """Test that parameters without requires_grad are skipped."""
    frozen = Tensor([1.0, 2.0])
    live = Tensor([1.0, 2.0], requires_grad=True)
    opt = AdamW({"frozen": frozen, "live": live})
    opt.step({live.uid: Tensor([1.0, 1.0])})
    np.testing.assert_array_equal(frozen.data, [1.0, 2.0])
    assert (live.data < [1.0, 2.0]).all()
    assert set(opt.state.m) == {"live"}


def test_step_errors() -> None:
    """Test missing and mis-shaped gradients."""
    theta = Tensor([1.0, 2.0], requires_grad=True)
    opt = AdamW({"theta": theta})
    with pytest.raises(UsageError, match="theta"):
        opt.step({})
    with pytest.raises(DimensionError):
        opt.step({theta.uid: Tensor([1.0])})
    assert opt.state.t == 0


def test_state_round_trip() -> None:
    """Test that a state rebuilt from its archive form continues identically."""
    a = Tensor(np.linspace(-1, 1, 6).reshape(2, 3), requires_grad=True)
    opt = AdamW({"w": a}, lr=0.05)
    grads = {a.uid: Tensor(np.ones((2, 3)))}
    opt.step(grads)
    restored = AdamWState.from_archive(opt.state.hyperparameters(), opt.state.tensors())
    assert restored.hyperparameters() == opt.state.hyperparameters()
    assert set(opt.state.tensors()) == {"adamw.m.w", "adamw.v.w"}

    b = Tensor(a.data, requires_grad=True)
    adamw_step({"w": b}, {b.uid: Tensor(np.ones((2, 3)))}, restored, 0.05)
    opt.step(grads)
    np.testing.assert_array_equal(a.data, b.data)


def test_descends_on_a_quadratic() -> None:
    """Test that repeated steps reduce a simple loss."""
    theta = Tensor([3.0, -4.0], requires_grad=True)
    opt = AdamW({"theta": theta}, lr=0.1, weight_decay=0.0)
    for _ in range(200):
        opt.step(T.backward(T.reduce(T.square(theta), "sum")))
    assert np.abs(theta.data).max() < 0.5


def test_cosine_schedule() -> None:
    """Test the endpoints, midpoint and monotonicity of the schedule."""
    sched = CosineSchedule(200, lr_init=2e-3)
    assert sched.lr(0) == pytest.approx(2e-3)
    assert sched.lr(100) == pytest.approx(1e-3)
    assert sched.lr(200) == pytest.approx(0.0, abs=1e-18)
    values = [sched.lr(t) for t in range(201)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    floor = CosineSchedule(10, lr_init=1.0, eta_min=0.1)
    assert cosine_lr(floor, 10) == pytest.approx(0.1)


def test_cosine_schedule_errors() -> None:
    """Test epochs outside the schedule and an empty schedule."""
    sched = CosineSchedule(10)
    with pytest.raises(UsageError):
        sched.lr(-1)
    with pytest.raises(UsageError):
        sched.lr(10.5)
    with pytest.raises(ConfigurationError):
        CosineSchedule(0)
