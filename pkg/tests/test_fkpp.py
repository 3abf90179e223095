import math

import numpy as np
import pytest

from bbmld.fkpp import (
    BoundaryError, FrontProfile, StabilityError, _steps_loop, _steps_numpy, front_position, front_trajectory,
    integrate_fkpp, step_profile, tail_probability,
)


@pytest.mark.parametrize("stepper", [_steps_loop, _steps_numpy])
@pytest.mark.parametrize("c", [0.0, 1.0])
def test_fixed_points(stepper, c):
    p = np.full(301, c)
    clamped = stepper(p, 500, 0.001, 0.05, 1.0, 1.0)
    assert np.all(p == c) and clamped == 0.0


def test_step_initial_front_at_origin():
    prof = step_profile(-20, 20, 0.05)
    assert abs(front_position(prof, 0.5)) <= 0.025
    prof.check()


def test_stability_rejected():
    with pytest.raises(StabilityError):
        integrate_fkpp(step_profile(-20, 20, 0.05), 1.0, 0.01)


def test_front_near_boundary_aborts():
    with pytest.raises(BoundaryError):
        integrate_fkpp(step_profile(-15, 15, 0.05), 8.0, 0.001, moving_window=False)


def test_level_must_be_inside():
    prof = step_profile(-20, 20, 0.05)
    with pytest.raises(ValueError):
        front_position(prof, 1.0)


def test_invariants_and_monotone_front():
    prof = step_profile(-30, 60, 0.05)
    xs = []
    for t in (0.5, 1, 2, 4, 8, 12):
        prof = integrate_fkpp(prof, t, 0.001)
        prof.check()
        xs.append(front_position(prof, 0.5))
    assert np.all(np.diff(xs) > 0)
    # front width is O(sigma), not O(t)
    assert 0 < front_position(prof, 0.1) - front_position(prof, 0.9) < 6.0


def test_moving_window_matches_fixed_domain():
    a = integrate_fkpp(step_profile(-30, 30, 0.05), 20.0, 0.001)
    b = integrate_fkpp(step_profile(-30, 120, 0.05), 20.0, 0.001, moving_window=False)
    assert a.shift_cells > 0
    assert front_position(a, 0.5) == pytest.approx(front_position(b, 0.5), abs=1e-6)


def test_numba_and_numpy_steppers_agree():
    p1 = step_profile(-10, 10, 0.05).values
    p2 = p1.copy()
    c1 = _steps_loop(p1, 500, 0.001, 0.05, 1.0, 1.0)
    c2 = _steps_numpy(p2, 500, 0.001, 0.05, 1.0, 1.0)
    np.testing.assert_allclose(p1, p2, rtol=0, atol=1e-14)
    assert c1 == pytest.approx(c2, abs=1e-12)


def test_grid_refinement():
    x = []
    for dx in (0.05, 0.025):
        prof = integrate_fkpp(step_profile(-30, 60, dx), 20.0, 0.4 * dx * dx)
        x.append(front_position(prof, 0.5))
    assert abs(x[0] - x[1]) / x[1] < 0.01


def test_speed_increases_towards_sqrt2_from_below():
    _, xs = front_trajectory(step_profile(-40, 120, 0.05), [10, 20, 40, 50], 0.001)
    early = (xs[1] - xs[0]) / 10
    late = (xs[3] - xs[2]) / 10
    assert early < late < math.sqrt(2)
    assert late == pytest.approx(math.sqrt(2), rel=0.03)


def test_bramson_shift():
    # x_1/2(t) = sqrt(2) t - 3/(2 sqrt 2) ln t + O(1): the O(1) part is stable
    _, xs = front_trajectory(step_profile(-40, 120, 0.05), [20, 50], 0.001)
    c = [x - (math.sqrt(2) * t - 1.5 / math.sqrt(2) * math.log(t)) for x, t in zip(xs, (20, 50))]
    assert abs(c[0] - c[1]) < 0.15
    assert -2.5 < c[1] < 0


def test_tail_probability_small_time_bounds():
    # one particle never does better than the BBM; the first moment never worse
    from scipy.stats import norm
    t = 0.05
    single = norm.sf(2.0 * t / math.sqrt(t))
    p = tail_probability(2.0, t, dx=0.005)
    assert single < p < math.exp(t) * single
