import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dvhsmooth.dose_model import single_peak, two_peak
from dvhsmooth.errors import BracketInvalidError, InsufficientDataError, InvalidArgumentError
from dvhsmooth.geometry import Region
from dvhsmooth.objective import make_quadratic, make_sqrt_curvature
from dvhsmooth.smoothness import (
    fd_second_derivative,
    holder_exponent,
    lambda_distance,
    locate_lambda_1d,
    step_scaling_probe,
)

BOX = Region.box((-1.5, -1.5, -1.5), (5.5, 1.5, 1.5))
SMALL = Region.box((-2, -2, -2), (2, 2, 2))


def test_single_peak_crossing_is_the_dose_level():
    lam = locate_lambda_1d(single_peak(), 0.8, 0, (0.5, 1.5), [1.0], search_box=SMALL)
    assert lam.sigma[0] == pytest.approx(0.8, abs=1e-12)
    assert lam.residual < 1e-8 and lam.critical_point.kind == "maximum"
    assert set(lam.to_dict()) == {"sigma", "critical_point", "dose_level", "residual"}


def test_bracket_checks():
    with pytest.raises(BracketInvalidError):
        locate_lambda_1d(single_peak(), 0.8, 0, (1.5, 0.5), [1.0], search_box=SMALL)
    with pytest.raises(BracketInvalidError):
        locate_lambda_1d(single_peak(), 3.0, 0, (0.5, 1.5), [1.0], search_box=SMALL)
    with pytest.raises(InvalidArgumentError):
        locate_lambda_1d(two_peak(), 0.6, 5, (0.8, 1.5), [1.0, 1.0], search_box=BOX)


def test_two_peak_crossing_value_matches_level():
    lam = locate_lambda_1d(two_peak(), 0.6, 1, (0.8, 1.5), [1.0], search_box=BOX)
    assert lam.critical_point.value == pytest.approx(0.6, abs=1e-8)
    assert 0.8 < lam.sigma[1] < 1.5 and lam.sigma[0] == 1.0


@given(st.floats(0.2, 3.0), st.floats(0.05, 2.0))
def test_lambda_distance_single_peak(s, h):
    # the only critical value is sigma itself, with unit sensitivity
    assert lambda_distance(single_peak(), [s], h, SMALL) == pytest.approx(abs(s - h), rel=1e-9, abs=1e-12)


def test_fd_second_derivative_sides():
    fn = lambda x: x**3
    assert fd_second_derivative(fn, 1.0, 1e-3) == pytest.approx(6.0, rel=1e-6)
    assert fd_second_derivative(fn, 1.0, 1e-3, "left") == pytest.approx(6.0 * (1 - 1e-3), rel=1e-9)
    assert fd_second_derivative(fn, 1.0, 1e-3, "right") == pytest.approx(6.0 * (1 + 1e-3), rel=1e-9)
    with pytest.raises(InvalidArgumentError):
        fd_second_derivative(fn, 1.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        fd_second_derivative(fn, 1.0, 1e-3, "up")


@pytest.mark.parametrize("p", [1.25, 1.5, 1.75])
def test_holder_exponent_one_sided_power(p):
    fn = lambda s: max(-s, 0.0) ** p + s
    assert holder_exponent(fn, 0.0, "left").exponent == pytest.approx(p - 2.0, abs=1e-6)
    # a smooth background masks the weak singularity without subtraction
    masked = holder_exponent(lambda s: s * s + fn(s), 0.0, "left", fit_quality_min=0.0)
    assert masked.exponent > p - 2.0 + 0.05
    right = holder_exponent(lambda s: s * s + fn(s), 0.0, "right")
    assert right.exponent == pytest.approx(0.0, abs=1e-6)


def test_holder_background_subtraction():
    fn = lambda s: s * s + max(-s, 0.0) ** 1.5
    fit = holder_exponent(fn, 0.0, "left", background="opposite")
    assert fit.exponent == pytest.approx(-0.5, abs=0.01)
    with pytest.raises(InvalidArgumentError):
        holder_exponent(fn, 0.0, "central", background="opposite")
    with pytest.raises(InvalidArgumentError):
        holder_exponent(fn, 0.0, "left", background="mean")


def test_probe_step_validation():
    fn = lambda s: s * s
    with pytest.raises(InsufficientDataError):
        holder_exponent(fn, 0.0, probe_steps=[1e-1, 1e-2, 1e-3, 1e-4])
    with pytest.raises(InsufficientDataError):
        holder_exponent(fn, 0.0, probe_steps=np.geomspace(1e-2, 2e-4, 6))
    with pytest.raises(InvalidArgumentError):
        holder_exponent(fn, 0.0, probe_steps=[1e-1, 1e-2, 1e-3, 0.0, -1e-4, 1e-5])


def test_step_scaling_sqrt_curvature():
    fit = step_scaling_probe(make_sqrt_curvature(), 0.0, [-0.5, -0.1, -0.02])
    assert fit.exponent == pytest.approx(0.5, abs=1e-6)


def test_step_scaling_smooth_minimum_is_linear():
    fit = step_scaling_probe(make_quadratic(0.0, 2.0), 0.0, [0.3, 1.0, 3.0, 10.0, 30.0])
    assert fit.exponent == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(InvalidArgumentError):
        step_scaling_probe(make_quadratic(), 0.0, [0.3, -1.0])
    with pytest.raises(InvalidArgumentError):
        step_scaling_probe(make_quadratic(), 0.0, [])


def test_lambda_distance_without_critical_points_is_inf():
    far = Region.box((10, 10, 10), (11, 11, 11))
    assert math.isinf(lambda_distance(single_peak(), [1.0], 0.5, far))
