"""Step controller unit tests."""

import numpy as np
import pytest

from acch.exceptions import SolverStallError
from acch.timestep import StepController


def controller(**kw):
    base = dict(dt_min=1e-4, dt_max=10.0, eta=1e4)
    base.update(kw)
    return StepController(**base)


def test_prediction_frozen_value():
    # rate 1 with eta=1e4 and bounds [1e-4, 10]: 10/sqrt(10001)
    ctrl = controller()
    x_prev = np.zeros(4)
    x_now = np.full(4, 2.0)  # rms change 2 over dt_prev=2 -> rate 1
    dt = ctrl.predict_dt(x_now, x_prev, 2.0)
    assert dt == pytest.approx(0.09999500037496875, rel=1e-12)


def test_prediction_limits():
    ctrl = controller()
    x = np.ones(8)
    assert ctrl.predict_dt(x, x, 1.0) == 10.0  # stationary -> dt_max
    fast = x + 1e9
    assert ctrl.predict_dt(fast, x, 1e-6) == 1e-4  # huge rate -> dt_min


def test_initial_dt_modes():
    assert controller().initial_dt() == 1e-4
    assert controller(fixed_dt=0.5).initial_dt() == 0.5
    assert controller(fixed_dt=0.5).predict_dt(np.ones(2), np.zeros(2), 1.0) == 0.5


def test_divergence_shrinks_and_doubles_eta():
    ctrl = controller()
    dt = ctrl.on_divergence(1.0)
    assert dt == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-14)
    assert ctrl.eta == 2e4
    assert ctrl.divergence_count == 1
    dt = ctrl.on_divergence(dt)
    assert ctrl.eta == 4e4
    # eta never decreases
    history = [ctrl.eta]
    for _ in range(3):
        ctrl.on_divergence(0.5)
        history.append(ctrl.eta)
    assert all(b > a for a, b in zip(history, history[1:]))


def test_divergence_clamped_at_min():
    ctrl = controller()
    assert ctrl.on_divergence(1.2e-4) == 1e-4
    assert ctrl.eta == 2e4


def test_stall_after_retries_at_min():
    ctrl = controller(max_retries_at_min=5)
    for _ in range(4):
        ctrl.on_divergence(1e-4)
    with pytest.raises(SolverStallError):
        ctrl.on_divergence(1e-4)


def test_success_resets_stall_counter():
    ctrl = controller(max_retries_at_min=3)
    ctrl.on_divergence(1e-4)
    ctrl.on_divergence(1e-4)
    ctrl.note_success()
    ctrl.on_divergence(1e-4)
    ctrl.on_divergence(1e-4)  # would have stalled without the reset


def test_fixed_mode_divergence_is_fatal():
    ctrl = controller(fixed_dt=0.1)
    with pytest.raises(SolverStallError):
        ctrl.on_divergence(0.1)


def test_validation():
    with pytest.raises(ValueError):
        StepController(dt_min=0.0, dt_max=1.0, eta=1.0)
    with pytest.raises(ValueError):
        StepController(dt_min=1.0, dt_max=0.5, eta=1.0)
    with pytest.raises(ValueError):
        StepController(dt_min=0.1, dt_max=1.0, eta=0.0)
