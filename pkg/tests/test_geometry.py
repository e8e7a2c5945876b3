import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dvhsmooth.errors import InvalidArgumentError
from dvhsmooth.geometry import Region

coord = st.floats(-5, 5, allow_nan=False)


def test_box_and_ball_volume():
    assert Region.box((0, 0, 0), (1, 2, 3)).exact_volume == 6.0
    assert Region.ball((1, 2, 3), 2.0).exact_volume == pytest.approx(32.0 * math.pi / 3.0)
    assert Region.cube(8.0).exact_volume == 16.0**3


@pytest.mark.parametrize(
    "make",
    [
        lambda: Region.box((0, 0, 0), (1, 0, 1)),
        lambda: Region.box((0, 0), (1, 1)),
        lambda: Region.ball((0, 0, 0), 0.0),
        lambda: Region.ball((0, 0, math.inf), 1.0),
        lambda: Region.from_dict({"kind": "cylinder"}),
        lambda: Region.from_dict({"kind": "ball", "center": [0, 0, 0]}),
    ],
)
def test_invalid_regions(make):
    with pytest.raises(InvalidArgumentError):
        make()


@pytest.mark.parametrize("region", [Region.box((-1, -2, 0), (3, 1, 2)), Region.ball((1, -1, 0.5), 2.5)])
def test_dict_round_trip_and_hashable(region):
    again = Region.from_dict(region.to_dict())
    assert again == region
    assert hash(again) == hash(region)


@given(coord, coord, coord)
def test_ball_contains_matches_distance(x, y, z):
    r = Region.ball((0.5, 0, -0.5), 3.0)
    p = np.array([x, y, z])
    assert bool(r.contains(p)) == (np.linalg.norm(p - [0.5, 0, -0.5]) <= 3.0)


def test_bounds_enclose_region():
    r = Region.ball((1, 2, 3), 2.0)
    lo, hi = r.bounds()
    np.testing.assert_allclose(lo, [-1, 0, 1])
    np.testing.assert_allclose(hi, [3, 4, 5])


@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_exit_distance_lands_on_boundary(x, y, z):
    rng = np.random.default_rng(0)
    d = rng.normal(size=(16, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.array([x, y, z])
    for region in (Region.ball((0, 0, 0), 1.5), Region.cube(1.0)):
        t = region.exit_distance(o, d)
        assert np.all(t >= 0)
        end = o + t[:, None] * d
        inside = o + 0.999 * t[:, None] * d
        assert np.all(region.contains(inside))
        if region.kind == "ball":
            np.testing.assert_allclose(np.linalg.norm(end, axis=1), 1.5, rtol=1e-12)
        else:
            np.testing.assert_allclose(np.abs(end).max(axis=1), 1.0, rtol=1e-12)
