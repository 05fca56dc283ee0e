import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagdiff.geometry import (OverlapError, contact_time, min_image, torus_distance,
                              unit_ball_volume, wrap)

coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
point2 = st.tuples(coord, coord)


def test_wrap_examples():
    np.testing.assert_allclose(wrap([1.25, -0.5]), [0.25, 0.5])
    np.testing.assert_array_equal(wrap([3.0, 3.0]), [0.0, 0.0])


def test_wrap_rejects_bad_input():
    with pytest.raises(ValueError):
        wrap([np.nan, 0.0])
    with pytest.raises(ValueError):
        wrap([0.1])


def test_min_image_half_period_tie():
    np.testing.assert_allclose(min_image([0.75, 0.0], [0.25, 0.0]), [0.5, 0.0])


def test_contact_time_examples():
    assert contact_time([-0.6, 0.0], [2.0, 0.0], 0.1, 1.0) == pytest.approx(0.25, abs=1e-14)
    assert contact_time([0.15, 0.0], [-1.0, 0.0], 0.05, 1.0) == pytest.approx(0.10, abs=1e-14)


def test_contact_time_receding_and_overlap():
    assert contact_time([0.2, 0.0], [1.0, 0.0], 0.1, 0.1) is None
    with pytest.raises(OverlapError):
        contact_time([0.05, 0.0], [1.0, 0.0], 0.1, 1.0)


def test_contact_through_periodic_image():
    # moving away from the partner, the image at distance 1 is met at t = 1 - 0.4 - 0.1
    t = contact_time([0.4, 0.0], [1.0, 0.0], 0.1, 1.0)
    assert t == pytest.approx(0.5, abs=1e-14)


def test_unit_ball_volumes():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


@given(point2)
def test_wrap_idempotent_and_in_range(p):
    w = wrap(p)
    assert np.all((0 <= w) & (w < 1))
    np.testing.assert_array_equal(wrap(w), w)


@given(point2, point2)
def test_min_image_antisymmetric_off_ties(x, y):
    a, b = min_image(x, y), min_image(y, x)
    tie = np.isclose(np.abs(a), 0.5, atol=1e-9)
    np.testing.assert_allclose(a[~tie], -b[~tie], atol=1e-9)
    assert np.all(np.abs(a) <= 0.5)
    assert torus_distance(x, y) <= math.sqrt(2) / 2 + 1e-12


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-3, 3), st.floats(-3, 3),
       st.floats(0.01, 0.1))
def test_contact_time_consistency(dx0, dx1, dv0, dv1, eps):
    dx, dv = np.array([dx0, dx1]), np.array([dv0, dv1])
    if np.linalg.norm(dx) <= eps * 1.001:
        return
    t = contact_time(dx, dv, eps, 1.0)
    if t is None:
        # dense sampling never finds an overlap
        ts = np.linspace(0, 1, 4001)[:, None]
        pts = dx + ts * dv
        d = np.linalg.norm(pts - np.round(pts), axis=1)
        assert d.min() >= eps - 1e-3
        return
    assert 0 < t <= 1.0
    y = dx + t * dv
    assert np.linalg.norm(y - np.round(y)) == pytest.approx(eps, abs=1e-12)
    ts = np.linspace(0, t, 2001)[:-1, None]
    pts = dx + ts * dv
    assert np.min(np.linalg.norm(pts - np.round(pts), axis=1)) >= eps - 1e-9


@given(st.floats(0.3, 0.5), st.floats(5, 20))
def test_fast_pair_found_in_enlarged_image_box(gap, speed):
    # a fast oblique flight wraps many times before reaching an image
    t = contact_time([gap, 0.0], [speed, speed * 0.37], 0.05, 2.0)
    assert t is None or 0 < t <= 2.0
    if t is not None:
        y = np.array([gap, 0.0]) + t * np.array([speed, speed * 0.37])
        assert np.linalg.norm(y - np.round(y)) == pytest.approx(0.05, abs=1e-10)
