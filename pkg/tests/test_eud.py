import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dvhsmooth import _backend
from dvhsmooth.dose_model import basis, two_peak
from dvhsmooth.errors import InvalidArgumentError
from dvhsmooth.eud import EudSpec, eud, eud_and_grad, eud_grad_sigma, node_extrema, power_mean_monotone_check
from dvhsmooth.geometry import Region
from dvhsmooth.histogram import QuadratureSpec, sample_region

FAM = two_peak()
QUAD = QuadratureSpec.grid(24)
REGIONS = [Region.ball((0.5, 0.2, 0.0), 1.5), Region.box((-1.5, -1.5, -1.5), (5.5, 1.5, 1.5))]
alphas = st.sampled_from([-3.0, -1.0, 0.5, 1.0, 2.0, 4.0, 10.0])
weights = st.floats(0.05, 3.0)


def test_alpha_validation():
    with pytest.raises(InvalidArgumentError):
        EudSpec(0.0)
    with pytest.raises(InvalidArgumentError):
        EudSpec(float("nan"))
    spec = EudSpec(2.0, REGIONS[0], QUAD)
    assert EudSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("alpha", [-2.0, 1.0, 3.0])
def test_monte_carlo_matches_direct_power_mean(alpha):
    # oracle: the power mean of f over the same seeded sample, computed directly
    region = REGIONS[0]
    q = QuadratureSpec.monte_carlo(5000, seed=9)
    pts = sample_region(region, 5000, np.random.default_rng(9))
    f = basis(FAM, pts) @ np.array([1.0, 0.5])
    expected = np.mean(f**alpha) ** (1 / alpha)
    assert eud(FAM, [1.0, 0.5], EudSpec(alpha, region, q)) == pytest.approx(expected, rel=1e-12)


@given(weights, weights, alphas, st.sampled_from([0, 1]))
def test_gradient_matches_central_differences(s1, s2, alpha, ri):
    spec = EudSpec(alpha, REGIONS[ri], QUAD)
    s = np.array([s1, s2])
    g = eud_grad_sigma(FAM, s, spec)
    fd = np.empty(2)
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-6 * s[j]
        fd[j] = (eud(FAM, s + e, spec) - eud(FAM, s - e, spec)) / (2 * e[j])
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9 * np.abs(g).max())


@given(weights, weights, alphas, st.floats(0.1, 10.0))
def test_homogeneous_of_degree_one(s1, s2, alpha, c):
    spec = EudSpec(alpha, REGIONS[0], QUAD)
    assert eud(FAM, [c * s1, c * s2], spec) == pytest.approx(c * eud(FAM, [s1, s2], spec), rel=1e-13)


@given(weights, weights, alphas)
def test_euler_identity(s1, s2, alpha):
    # degree-1 homogeneity: sigma . grad E = E
    e, g = eud_and_grad(FAM, [s1, s2], EudSpec(alpha, REGIONS[1], QUAD))
    assert g @ [s1, s2] == pytest.approx(e, rel=1e-12)
    assert np.all(g > 0)


@given(weights, weights, alphas, st.sampled_from([0, 1]))
def test_bounded_by_node_extrema(s1, s2, alpha, ri):
    lo, hi = node_extrema(FAM, [s1, s2], REGIONS[ri], QUAD)
    e = eud(FAM, [s1, s2], EudSpec(alpha, REGIONS[ri], QUAD))
    assert lo * (1 - 1e-13) <= e <= hi * (1 + 1e-13)


@given(weights, weights)
def test_power_mean_inequality(s1, s2):
    vals = power_mean_monotone_check(FAM, [s1, s2], REGIONS[1], [-4, -1, 0.5, 1, 2, 8, 30], QUAD)
    assert all(b >= a * (1 - 1e-13) for a, b in zip(vals, vals[1:]))


def test_power_mean_check_arguments():
    with pytest.raises(InvalidArgumentError):
        power_mean_monotone_check(FAM, [1, 1], REGIONS[0], [2, 1], QUAD)
    with pytest.raises(InvalidArgumentError):
        power_mean_monotone_check(FAM, [1, 1], REGIONS[0], [0, 1], QUAD)


def test_large_alpha_tends_to_extrema():
    # slowly: nodes at a ball's surface carry tapered, tiny weights
    lo, hi = node_extrema(FAM, [1, 1], REGIONS[0], QUAD)
    e = [eud(FAM, [1, 1], EudSpec(a, REGIONS[0], QUAD)) for a in (-200.0, -50.0, 50.0, 200.0)]
    assert lo < e[0] < e[1] and e[2] < e[3] < hi
    assert e[3] == pytest.approx(hi, rel=0.05) and e[0] == pytest.approx(lo, rel=0.15)


@pytest.mark.skipif(_backend.NAME != "cython", reason="compiled kernels not built")
def test_backends_agree():
    for region in REGIONS:
        spec = EudSpec(2.5, region, QuadratureSpec.grid(32))
        a = eud_and_grad(FAM, [1, 0.7], spec, backend="cython")
        b = eud_and_grad(FAM, [1, 0.7], spec, backend="python")
        assert a[0] == pytest.approx(b[0], rel=1e-13)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-12)


def test_single_peak_power_means():
    from dvhsmooth.dose_model import single_peak

    fam, quad = single_peak(), QuadratureSpec.grid(32)
    vals = power_mean_monotone_check(fam, [1.0], Region.ball((0, 0, 0), 2.0), [-1, 1, 2, 4], quad)
    assert np.all(np.diff(vals) >= 0)
    # the large-alpha mean is close to the maximum only where the field varies little
    small = Region.ball((0, 0, 0), 0.25)
    e32 = eud(fam, [1.0], EudSpec(32.0, small, quad))
    top = node_extrema(fam, [1.0], small, quad)[1]
    assert e32 <= top and (top - e32) / top < 0.05
