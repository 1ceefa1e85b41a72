import math

import numpy as np
import pytest

from starformer.optim import AdamState, adam_step
from starformer.tensor import Tensor


def test_zero_gradient_leaves_params_unchanged():
    p = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    st = AdamState.for_params([p])
    for _ in range(3):
        adam_step([p], [np.zeros((1, 2))], st)
    assert p.data.tolist() == [[1.0, -2.0]]
    adam_step([p], [None], st)
    assert p.data.tolist() == [[1.0, -2.0]]
    assert st.t == 4


def test_first_step_is_lr_for_unit_gradient():
    p = Tensor(np.array([0.0]), requires_grad=True)
    st = AdamState.for_params([p], lr=0.01)
    adam_step([p], [np.array([1.0])], st)
    assert p.data[0] == pytest.approx(-0.01, rel=1e-6)
    # constant gradient keeps the bias-corrected step at lr
    for _ in range(5):
        before = p.data[0]
        adam_step([p], [np.array([1.0])], st)
        assert before - p.data[0] == pytest.approx(0.01, rel=1e-6)


def _scripted_adam(x, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float Adam written out term by term."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
    return x


def test_two_steps_match_scripted_oracle():
    x0 = np.array([0.7, -1.3, 2.0])
    g1 = np.array([0.5, -0.25, 3.0])
    g2 = np.array([-1.0, 0.125, 0.5])
    p = Tensor(x0.copy(), requires_grad=True)
    st = AdamState.for_params([p], lr=0.05)
    adam_step([p], [g1], st)
    adam_step([p], [g2], st)
    expect = [_scripted_adam(x0[i], [g1[i], g2[i]], lr=0.05) for i in range(3)]
    assert np.allclose(p.data, expect, rtol=0, atol=1e-15)
    assert st.t == 2
    assert st.m[0].shape == p.shape and st.v[0].shape == p.shape


def test_state_is_lazily_created_and_validated():
    a, b = Tensor(np.zeros(2)), Tensor(np.zeros(3))
    st = AdamState()
    adam_step([a, b], [np.ones(2), np.ones(3)], st)
    assert len(st.m) == 2
    with pytest.raises(ValueError):
        adam_step([a], [np.ones(2)], st)
