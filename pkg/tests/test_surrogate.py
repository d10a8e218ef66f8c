import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsme.surrogate import (
    BezierTrajectory,
    LinearTrajectory,
    bezier_dP1_coeff,
    bezier_dt,
    bezier_eval,
    linear_eval,
    midpoint,
)
from oracles import rel_err


def test_linear_endpoints_and_midpoint():
    w0 = np.array([0.0, 0.0])
    wT = np.array([2.0, 4.0])
    assert np.array_equal(linear_eval(LinearTrajectory(w0, wT, 0.0)), w0)
    assert np.array_equal(linear_eval(LinearTrajectory(w0, wT, 1.0)), wT)
    np.testing.assert_array_equal(linear_eval(LinearTrajectory(w0, wT, 0.5)), [1.0, 2.0])


def test_parameters_are_clamped():
    w = np.zeros(2)
    assert LinearTrajectory(w, w, 1.7).alpha == 1.0
    assert BezierTrajectory(w, w, w, -0.3).t == 0.0


def test_bezier_single_coordinate_by_hand():
    traj = BezierTrajectory(np.array([0.0]), np.array([0.0]), np.array([1.0]), 0.5)
    np.testing.assert_array_equal(bezier_eval(traj), [0.5])


def test_bezier_endpoints_are_exact(rng):
    for _ in range(10):
        w0, wT, p1 = rng.normal(size=(3, 50))
        assert np.array_equal(bezier_eval(BezierTrajectory(w0, wT, p1, 0.0)), w0)
        assert np.array_equal(bezier_eval(BezierTrajectory(w0, wT, p1, 1.0)), wT)


def test_midpoint_control_reduces_to_linear(rng):
    w0, wT = rng.normal(size=(2, 40))
    for t in np.linspace(0, 1, 101):
        bez = bezier_eval(BezierTrajectory.straight(w0, wT, t))
        lin = linear_eval(LinearTrajectory(w0, wT, t))
        assert np.max(np.abs(bez - lin)) < 1e-14


def test_dt_at_half_with_midpoint_is_chord():
    w0 = np.array([1.0, -2.0, 0.5])
    wT = np.array([3.0, 2.0, -0.5])
    np.testing.assert_array_equal(bezier_dt(BezierTrajectory.straight(w0, wT, 0.5)), wT - w0)


def test_dt_at_zero(rng):
    w0, wT, p1 = rng.normal(size=(3, 8))
    np.testing.assert_allclose(bezier_dt(BezierTrajectory(w0, wT, p1, 0.0)), 2 * (p1 - w0), rtol=1e-15)


def test_dt_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(5):
        w0, wT, p1 = rng.normal(size=(3, 12))
        t = rng.uniform(0.1, 0.9)
        numeric = (
            bezier_eval(BezierTrajectory(w0, wT, p1, t + h)) - bezier_eval(BezierTrajectory(w0, wT, p1, t - h))
        ) / (2 * h)
        assert rel_err(bezier_dt(BezierTrajectory(w0, wT, p1, t)), numeric) < 1e-8


def test_dP1_coefficient():
    assert bezier_dP1_coeff(0.0) == 0.0
    assert bezier_dP1_coeff(1.0) == 0.0
    assert bezier_dP1_coeff(0.5) == 0.5


def test_dP1_coefficient_matches_finite_differences(rng):
    h = 1e-6
    w0, wT, p1 = rng.normal(size=(3, 6))
    for t in (0.2, 0.5, 0.7):
        for i in range(6):
            up, down = p1.copy(), p1.copy()
            up[i] += h
            down[i] -= h
            numeric = (
                bezier_eval(BezierTrajectory(w0, wT, up, t))[i] - bezier_eval(BezierTrajectory(w0, wT, down, t))[i]
            ) / (2 * h)
            assert numeric == pytest.approx(bezier_dP1_coeff(t), rel=1e-8)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.0, 1.0),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)
def test_reduction_property(t, a, b):
    w0, wT = np.array(a), np.array(b)
    bez = bezier_eval(BezierTrajectory(w0, wT, midpoint(w0, wT), t))
    lin = linear_eval(LinearTrajectory(w0, wT, t))
    np.testing.assert_allclose(bez, lin, atol=1e-13)
