import math

import numpy as np
import pytest

from core.autograd import Parameter, backward, constant, dot
from core.exceptions import ShapeError
from core.optim import Adam, AdamState, adam_step


def scalar_adam(w, grads, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8):
    """Reference Adam on a single float, one step per gradient"""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        w = w - lr * m_hat / (math.sqrt(v_hat) + eps)
    return w


def test_single_step_matches_scalar_reference():
    params = {"w": np.array(1.0)}
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.array(0.5)}, state)
    assert state.t == 1
    assert float(params["w"]) == pytest.approx(scalar_adam(1.0, [0.5]), rel=1e-15)


def test_two_steps_match_scalar_reference():
    params = {"w": np.array(1.0)}
    state = AdamState(lr=0.1)
    for _ in range(2):
        adam_step(params, {"w": np.array(0.5)}, state)
    assert state.t == 2
    assert float(params["w"]) == pytest.approx(scalar_adam(1.0, [0.5, 0.5]), rel=1e-15)


def test_zero_gradient_is_exact_noop(rng):
    value = rng.normal(size=(3, 4))
    params = {"w": value.copy()}
    state = AdamState()
    for _ in range(3):
        adam_step(params, {"w": np.zeros((3, 4))}, state)
    np.testing.assert_array_equal(params["w"], value)
    assert state.t == 3


def test_zero_gradient_after_real_step_leaves_values():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.array([0.5, 0.5])}, state)
    np.testing.assert_allclose(params["w"], [0.9, -2.1], rtol=1e-7)
    after_real = params["w"].copy()
    m_before = state.m["w"].copy()

    adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], after_real)
    np.testing.assert_allclose(state.m["w"], 0.9 * m_before)
    assert state.t == 2


def test_zero_gradient_only_freezes_that_tensor():
    params = {"a": np.array([1.0]), "b": np.array([1.0])}
    state = AdamState(lr=0.1)
    adam_step(params, {"a": np.array([1.0]), "b": np.array([1.0])}, state)
    frozen = params["b"].copy()
    adam_step(params, {"a": np.array([1.0]), "b": np.array([0.0])}, state)
    np.testing.assert_array_equal(params["b"], frozen)
    assert params["a"][0] == pytest.approx(scalar_adam(1.0, [1.0, 1.0]), rel=1e-12)


def test_moments_match_parameter_shapes(rng):
    params = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=5)}
    grads = {name: np.ones_like(p) for name, p in params.items()}
    state = adam_step(params, grads, AdamState())
    assert {k: v.shape for k, v in state.m.items()} == {"a": (2, 3), "b": (5,)}
    assert {k: v.shape for k, v in state.v.items()} == {"a": (2, 3), "b": (5,)}


def test_shape_mismatch_rejected_before_update():
    params = {"w": np.zeros(3)}
    state = AdamState()
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(4)}, state)
    with pytest.raises(ShapeError):
        adam_step(params, {}, state)
    assert state.t == 0


def test_adam_wrapper_descends_on_a_linear_objective(rng):
    w = Parameter(rng.normal(size=4), name="w")
    x = constant(np.ones(4))
    opt = Adam({"w": w}, lr=0.01)
    before = float(dot(w, x).value)
    backward(dot(w, x))
    opt.step()
    opt.zero_grad()
    assert float(dot(w, x).value) < before
    np.testing.assert_array_equal(w.grad, np.zeros(4))
