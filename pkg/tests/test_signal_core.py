import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfcw.errors import InvalidArgument
from cfcw.signal_core import (Medium, NonlinearityModel, PhaseSample, distance_to_phase_delta,
                              interference_error_bound, max_unambiguous_speed,
                              phase_to_distance_delta, wrap_phase)

C = Medium(343.0)


def test_phase_to_distance_values():
    assert phase_to_distance_delta(0.0, 40e3, C) == 0.0
    assert phase_to_distance_delta(2 * np.pi, 40e3, C) == pytest.approx(8.575e-3)
    # pi at 80 kHz: 343 / 80000 / 2
    assert phase_to_distance_delta(np.pi, 80e3, C) == pytest.approx(2.1438e-3, abs=1e-7)
    assert phase_to_distance_delta(-np.pi, 80e3, C) < 0


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1e3, 1e5))
def test_phase_to_distance_is_linear(a, b, f):
    lhs = phase_to_distance_delta(a + b, f, C)
    rhs = phase_to_distance_delta(a, f, C) + phase_to_distance_delta(b, f, C)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert phase_to_distance_delta(a, 2 * f, C) == pytest.approx(
        0.5 * phase_to_distance_delta(a, f, C), abs=1e-15)


@given(st.floats(-1, 1), st.floats(1e3, 1e5))
def test_distance_phase_round_trip(d, f):
    assert phase_to_distance_delta(distance_to_phase_delta(d, f, C), f, C) == pytest.approx(d)


def test_phase_to_distance_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        phase_to_distance_delta(np.nan, 40e3)
    with pytest.raises(InvalidArgument):
        phase_to_distance_delta(1.0, 0.0)


def test_max_unambiguous_speed():
    assert max_unambiguous_speed(40e3, 3e-3, C) == pytest.approx(1.429, abs=1e-3)
    assert max_unambiguous_speed(40e3, 3e-3, C, velocity_aided=True) == pytest.approx(2.858,
                                                                                       abs=1e-3)
    assert max_unambiguous_speed(80e3, 3e-3, C) == pytest.approx(0.7146, abs=1e-4)
    with pytest.raises(InvalidArgument):
        max_unambiguous_speed(40e3, 0.0)


@given(st.floats(1e3, 1e5), st.floats(1e-4, 1e-1))
def test_aided_speed_doubles(f, t):
    assert max_unambiguous_speed(f, t, velocity_aided=True) == pytest.approx(
        2 * max_unambiguous_speed(f, t))


def test_interference_bound_values():
    assert interference_error_bound(0.0, 40e3, C) == (0.0, 0.0)
    ph, d = interference_error_bound(1.0, 40e3, C)
    assert ph == pytest.approx(np.pi / 2)
    assert d == pytest.approx(2.1438e-3, abs=1e-7)
    ph, d = interference_error_bound(0.5, 40e3, C)
    assert ph == pytest.approx(np.pi / 6)
    assert d == pytest.approx(0.7146e-3, abs=1e-7)
    with pytest.raises(InvalidArgument):
        interference_error_bound(1.5, 40e3)


@given(st.floats(0, 1), st.floats(1e3, 5e4))
def test_interference_bound_halves_with_frequency(r, f):
    _, d1 = interference_error_bound(r, f)
    _, d2 = interference_error_bound(r, 2 * f)
    assert d2 == pytest.approx(d1 / 2, abs=1e-15)


@given(st.floats(-1e3, 1e3))
def test_wrap_phase_range(x):
    w = wrap_phase(x)
    assert -np.pi <= w < np.pi
    assert np.cos(w) == pytest.approx(np.cos(x), abs=1e-9)


def test_model_invariants():
    with pytest.raises(InvalidArgument):
        Medium(0.0)
    with pytest.raises(InvalidArgument):
        NonlinearityModel(1.0, 1.0)
    with pytest.raises(InvalidArgument):
        NonlinearityModel(1.0, -0.1)
    nl = NonlinearityModel(1.0, 0.1)
    assert nl.apply(2.0) == pytest.approx(2.4)
    with pytest.raises(InvalidArgument):
        PhaseSample(4.0, 0, 40e3)
