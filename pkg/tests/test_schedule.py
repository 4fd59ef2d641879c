import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from styledrag.diffusion import build_schedule
from styledrag.errors import ParameterError


def test_two_step_schedule_hand_values():
    s = build_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(s.betas, [0.1, 0.2])
    np.testing.assert_allclose(s.alphas, [0.9, 0.8])
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.72])


def test_single_step_schedule():
    s = build_schedule(1, 0.1, 0.1)
    np.testing.assert_allclose(s.alpha_bars, [0.9])


def test_decreasing_beta_range_rejected():
    with pytest.raises(ParameterError):
        build_schedule(2, 0.5, 0.4)


@pytest.mark.parametrize("bad", [(0, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.1, 1.0),
                                 (10, -0.1, 0.2)])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ParameterError):
        build_schedule(*bad)


@given(num_steps=st.integers(1, 500),
       beta_start=st.floats(1e-5, 0.3),
       spread=st.floats(0.0, 0.5))
@settings(max_examples=60, deadline=None)
def test_alpha_bars_strictly_decreasing_and_bounded(num_steps, beta_start, spread):
    beta_end = min(beta_start + spread, 0.9)
    s = build_schedule(num_steps, beta_start, beta_end)
    assert np.all(s.alpha_bars > 0) and np.all(s.alpha_bars < 1)
    assert np.all(np.diff(s.alpha_bars) < 0) or num_steps == 1
    # recurrence ab[t] = ab[t-1] * alpha[t]
    np.testing.assert_allclose(s.alpha_bars[1:], s.alpha_bars[:-1] * s.alphas[1:],
                               rtol=1e-12)


def test_continuous_time_maps_to_valid_indices():
    s = build_schedule(100, 1e-4, 0.02)
    assert s.step_from_unit(0.0) == 0
    assert s.step_from_unit(0.999999) == 99
    assert s.step_from_unit(0.5) == 50
