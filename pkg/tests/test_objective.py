import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dvhsmooth.dose_model import two_peak
from dvhsmooth.errors import InvalidArgumentError, NumericalDomainError
from dvhsmooth.eud import EudSpec, eud
from dvhsmooth.geometry import Region
from dvhsmooth.histogram import QuadratureSpec, volume_above
from dvhsmooth.objective import (
    OBJECTIVES_1D,
    Constraint,
    ObjectiveSpec,
    deviations,
    make_f1,
    make_f2,
    make_quadratic,
    make_sqrt_curvature,
    objective_grad_eud,
    objective_grad_fd,
    objective_value,
    penalty,
    penalty_derivative,
    penalty_second,
)

BOX = Region.box((-1.5, -1.5, -1.5), (5.5, 1.5, 1.5))
BALL = Region.ball((4.0, 0.0, 0.0), 1.0)
QUAD = QuadratureSpec.grid(24)


# --- penalty ---------------------------------------------------------------------------


@given(st.floats(-10, 10))
def test_penalty_and_derivatives(x):
    assert penalty(x) == (x * x if x >= 0 else 0.0)
    assert penalty_derivative(x) == pytest.approx((penalty(x + 1e-7) - penalty(x - 1e-7)) / 2e-7, abs=1e-6)
    assert penalty_second(x) == (2.0 if x > 0 else (0.0 if x < 0 else 2.0))


def test_penalty_seam_one_sided():
    assert penalty_second(0.0, "left") == 0.0 and penalty_second(0.0, "right") == 2.0
    np.testing.assert_array_equal(penalty(np.array([-1.0, 0.5])), [0.0, 0.25])


# --- constraints and specs -----------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="dv-mean", dose_level=1.0),
        dict(kind="dv-max", dose_level=1.0, weight=0.0),
        dict(kind="dv-max", dose_level=-0.1),
        dict(kind="dv-max", dose_level=0.5, volume_fraction=1.5),
        dict(kind="eud-min", dose_level=0.5, alpha=0.0),
    ],
)
def test_constraint_validation(kw):
    with pytest.raises(InvalidArgumentError):
        Constraint(**kw)


def test_spec_round_trip_and_empty_rejected():
    spec = ObjectiveSpec(
        two_peak(),
        ((BOX, Constraint("dv-max", 0.6, 0.02, weight=3.0)), (BALL, Constraint("eud-min", 0.4, alpha=2.0))),
        QUAD,
    )
    again = ObjectiveSpec.from_dict(spec.to_dict())
    assert again == spec
    with pytest.raises(InvalidArgumentError):
        ObjectiveSpec(two_peak(), ())
    with pytest.raises(InvalidArgumentError):
        ObjectiveSpec.from_dict({"family": two_peak().to_dict()})


def test_deviations_match_direct_computation():
    s = np.array([1.0, 0.9])
    spec = ObjectiveSpec(
        two_peak(),
        (
            (BOX, Constraint("dv-max", 0.6, 0.02, weight=3.0)),
            (BOX, Constraint("dv-min", 0.3, 0.5)),
            (BALL, Constraint("eud-min", 0.4, alpha=2.0)),
            (BALL, Constraint("eud-max", 0.3, alpha=8.0, weight=2.0)),
        ),
        QUAD,
    )
    d = deviations(spec, s)
    assert d[0] == pytest.approx(volume_above(two_peak(), s, BOX, 0.6, QUAD) - 0.02, abs=1e-15)
    assert d[1] == pytest.approx(0.5 - volume_above(two_peak(), s, BOX, 0.3, QUAD), abs=1e-15)
    assert d[2] == pytest.approx(0.4 - eud(two_peak(), s, EudSpec(2.0, BALL, QUAD)), abs=1e-15)
    assert d[3] == pytest.approx(eud(two_peak(), s, EudSpec(8.0, BALL, QUAD)) - 0.3, abs=1e-15)
    weights = np.array([3.0, 1.0, 1.0, 2.0])
    assert objective_value(spec, s) == pytest.approx(np.sum(weights * np.maximum(d, 0) ** 2), rel=1e-14)


@given(st.floats(0.3, 2.0), st.floats(0.3, 2.0))
def test_eud_gradient_matches_fd(s1, s2):
    spec = ObjectiveSpec(
        two_peak(),
        ((BALL, Constraint("eud-min", 1.5, alpha=2.0)), (BOX, Constraint("eud-max", 0.05, alpha=4.0, weight=5.0))),
        QUAD,
    )
    g = objective_grad_eud(spec, [s1, s2])
    fd = objective_grad_fd(spec, [s1, s2], step=1e-5)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_gradient_argument_checks():
    dv = ObjectiveSpec(two_peak(), ((BOX, Constraint("dv-max", 0.6, 0.02)),), QUAD)
    with pytest.raises(InvalidArgumentError):
        objective_grad_eud(dv, [1, 1])
    with pytest.raises(InvalidArgumentError):
        objective_grad_fd(dv, [1, 5e-4])
    with pytest.raises(InvalidArgumentError):
        objective_grad_fd(dv, [1, 1], step=0.0)


def test_fd_gradient_warm_start_matches_cold_evaluation():
    spec = ObjectiveSpec(two_peak(), ((BOX, Constraint("dv-max", 0.6, 0.02, weight=100.0)),), QUAD)
    s, step = np.array([1.0, 1.2]), 1e-3
    g = objective_grad_fd(spec, s, step)
    cold = [(objective_value(spec, s + e) - objective_value(spec, s - e)) / (2 * step) for e in np.eye(2) * step]
    np.testing.assert_allclose(g, cold, rtol=1e-12, atol=1e-13)


# --- closed-form 1-D examples -----------------------------------------------------------------


def fd1(fn, s, h=1e-6):
    return (fn(s + h) - fn(s - h)) / (2 * h)


@given(st.floats(-9.0, 40.0))
def test_f1_derivatives(s):
    f1 = make_f1()
    assert f1.first(s) == pytest.approx(fd1(f1.value, s), rel=1e-5, abs=1e-9)
    assert f1.second(s) == pytest.approx(fd1(f1.first, s), rel=1e-5, abs=1e-9)


def test_f1_minimum_and_domain():
    f1 = make_f1()
    assert f1.value(5.0) == 0.0 and f1.first(5.0) == 0.0 and f1.second(5.0) > 0
    assert f1.minimizer == 5.0
    with pytest.raises(NumericalDomainError):
        f1.value(-10.0)


@given(st.one_of(st.floats(-0.9, -1e-3), st.floats(1e-3, 30.0)))
def test_f2_derivatives(s):
    f2 = make_f2()
    assert f2.first(s) == pytest.approx(fd1(f2.value, s, 1e-7), rel=1e-5, abs=1e-9)
    assert f2.second(s) == pytest.approx(fd1(f2.first, s, 1e-7), rel=1e-4, abs=1e-8)


@given(st.floats(0.0, 30.0))
def test_f2_equals_f1_on_right(s):
    f1, f2 = make_f1(), make_f2()
    assert f2.value(s) == f1.value(s) and f2.first(s) == f1.first(s)
    assert f2.second(s, "right") == f1.second(s)


def test_f2_is_c1_at_zero_with_unbounded_left_curvature():
    f2 = make_f2()
    assert f2.value(-1e-12) == pytest.approx(f2.value(0.0), abs=1e-12)
    assert f2.first(-1e-12) == pytest.approx(f2.first(0.0), abs=1e-5)
    assert math.isinf(f2.second(0.0, "left"))
    assert math.isfinite(f2.second(0.0, "right"))
    assert f2.second(-1e-8) > 1e3
    assert f2.flagged == (0.0,)


@pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-6])
def test_f2_second_derivative_law(eps):
    # F2'' ~ (-sigma)^(-1/2): quartering the distance doubles it
    f2 = make_f2()
    assert f2.second(-eps) / f2.second(-4 * eps) == pytest.approx(2.0, rel=0.1)


def test_other_fixtures():
    q = make_quadratic(2.0, 3.0)
    assert q.value(2.0) == 0.0 and q.second(7.0) == 6.0
    sq = make_sqrt_curvature()
    assert sq.second(-0.04) == pytest.approx(5.0) and math.isinf(sq.second(0.0))
    assert set(OBJECTIVES_1D) >= {"f1", "f2"}
    with pytest.raises(InvalidArgumentError):
        make_f2(alpha_loc=0.0)
    with pytest.raises(InvalidArgumentError):
        q.second(1.0, side="middle")
