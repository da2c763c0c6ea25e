import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curriclab.model import ModelConfig, ModelParams, NumericalDivergence
from curriclab.optim import AdamConfig, LrSchedule, adam_step


def scalar_params(value=0.5):
    return ModelParams(ModelConfig(5, 5, embed_dim=2, ff_dim=2, layers=1, heads=1), {"w": np.array([value])})


def test_warmup_reaches_peak():
    s = LrSchedule(peak_lr=5e-4, warmup_steps=4000, init_lr=1e-7)
    assert s(4000) == pytest.approx(5e-4, rel=1e-15)
    assert s(0) == pytest.approx(1e-7)
    assert s(2000) == pytest.approx(1e-7 + (5e-4 - 1e-7) / 2)


def test_inverse_sqrt_halves_at_four_warmups():
    s = LrSchedule(peak_lr=7e-4, warmup_steps=4000)
    assert s(16000) == pytest.approx(3.5e-4, rel=1e-15)


@pytest.mark.invariant
@settings(max_examples=200, deadline=None)
@given(st.floats(1e-5, 1e-2), st.integers(1, 5000), st.integers(1, 20000))
def test_schedule_rises_then_decays(peak, warmup, step):
    s = LrSchedule(peak, warmup, 1e-7)
    if step < warmup:
        assert s(step) <= s(step + 1)
    else:
        assert s(step + 1) <= s(step)
    assert 0 < s(step) <= peak + 1e-18


def test_single_adam_step_matches_hand_derivation():
    params = scalar_params(0.5)
    schedule = LrSchedule(1e-3, 10, 0.0)
    adam_step(params, {"w": np.array([1.0])}, schedule, AdamConfig(0.9, 0.98, 1e-9))
    # m = 0.1, v = 0.02; bias correction divides by 0.1 and 0.02 -> m_hat = v_hat = 1
    lr = 1e-3 * 1 / 10
    expected = 0.5 - lr * 1.0 / (math.sqrt(1.0) + 1e-9)
    assert params.weights["w"][0] == pytest.approx(expected, rel=1e-15)
    assert params.m["w"][0] == pytest.approx(0.1)
    assert params.v["w"][0] == pytest.approx(0.02)
    assert params.step == 1


def test_two_adam_steps():
    params = scalar_params(0.0)
    schedule = LrSchedule(1e-2, 1, 0.0)
    adam_step(params, {"w": np.array([1.0])}, schedule)
    adam_step(params, {"w": np.array([-2.0])}, schedule)
    m = 0.9 * 0.1 + 0.1 * -2.0
    v = 0.98 * 0.02 + 0.02 * 4.0
    m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.98 ** 2)
    lr2 = 1e-2 * math.sqrt(1 / 2)
    expected = -1e-2 * 1.0 / (1.0 + 1e-9) - lr2 * m_hat / (math.sqrt(v_hat) + 1e-9)
    assert params.weights["w"][0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_gradient_raises(bad):
    params = scalar_params()
    with pytest.raises(NumericalDivergence, match="numerical divergence"):
        adam_step(params, {"w": np.array([bad])}, LrSchedule())
    assert params.step == 0
    assert params.weights["w"][0] == 0.5


@pytest.mark.invariant
@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5))
def test_moments_keep_shape_and_step_grows(grads):
    params = scalar_params()
    for i, g in enumerate(grads, 1):
        adam_step(params, {"w": np.array([g])}, LrSchedule(1e-3, 4))
        assert params.step == i
        assert params.m["w"].shape == params.v["w"].shape == params.weights["w"].shape
        assert np.isfinite(params.weights["w"]).all()
