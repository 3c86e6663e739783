import numpy as np
import pytest

from errors import NumericalError, ShapeError
from nn.optim import AdamaxState, adamax_step


def test_first_step_magnitude_is_lr():
    params = {"w": np.array([0.5])}
    new, state = adamax_step(params, {"w": np.array([1.0])}, AdamaxState(lr=0.001))
    assert new["w"][0] == pytest.approx(0.5 - 0.001, abs=1e-9)
    assert state.t == 1
    assert state.m["w"][0] == pytest.approx(0.1)
    assert state.u["w"][0] == pytest.approx(1.0)


def test_matches_hand_recurrence():
    grads = [np.array([0.3, -2.0]), np.array([-0.1, 0.5]), np.array([0.7, 0.0])]
    params = {"w": np.array([1.0, -1.0])}
    state = AdamaxState(lr=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8)
    w = params["w"].copy()
    m = np.zeros(2)
    u = np.zeros(2)
    for t, g in enumerate(grads, start=1):
        params, state = adamax_step(params, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        u = np.maximum(0.999 * u, np.abs(g))
        w = w - 0.01 / (1 - 0.9 ** t) * m / (u + 1e-8)
    assert np.allclose(params["w"], w, atol=1e-12)


def test_step_is_pure():
    params = {"w": np.array([1.0, 2.0])}
    grads = {"w": np.array([0.5, -0.5])}
    state = AdamaxState()
    adamax_step(params, grads, state)
    assert np.array_equal(params["w"], [1.0, 2.0])
    assert state.t == 0 and state.m == {}


def test_gradient_problems():
    params = {"w": np.zeros(2)}
    with pytest.raises(ShapeError):
        adamax_step(params, {}, AdamaxState())
    with pytest.raises(ShapeError):
        adamax_step(params, {"w": np.zeros(3)}, AdamaxState())
    with pytest.raises(NumericalError):
        adamax_step(params, {"w": np.array([np.inf, 0.0])}, AdamaxState())
