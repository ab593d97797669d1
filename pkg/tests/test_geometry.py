import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modeflux.errors import NonMonotoneProfile, SourceOnTurningPoint, ValidationError
from modeflux.geometry import (
    WidthProfile,
    airy_length,
    evaluate_width,
    find_turning_points,
    mode_count,
)

K = 2 * math.pi


def test_linear_ramp_values_and_slope():
    p = WidthProfile.linear(-10.0, 0.0, 1.0, 2.0)
    assert p.d_at(-5.0) == pytest.approx(1.5)
    assert p.d_prime_at(-5.0) == pytest.approx(0.1)
    assert p.d_at(-20.0) == pytest.approx(1.0)
    assert p.d_at(5.0) == pytest.approx(2.0)
    assert p.d_prime_at(5.0) == 0.0


def test_caps_are_c1():
    p = WidthProfile.linear(-10.0, 0.0, 1.0, 2.0, cap=0.5)
    h = 1e-7
    for z in (-10.5, -10.0, 0.0, 0.5):
        left = p.d_at(z - h)
        right = p.d_at(z + h)
        assert abs(right - left) < 1e-6
        assert abs(p.d_prime_at(z - h) - p.d_prime_at(z + h)) < 1e-5


@given(st.floats(-12, 2), st.floats(1e-3, 1.0))
@settings(max_examples=60, deadline=None)
def test_linear_profile_is_nondecreasing(z, dz):
    p = WidthProfile.linear(-10.0, 0.0, 1.0, 2.0, cap=0.5)
    assert p.d_at(z + dz) >= p.d_at(z) - 1e-14


@given(st.floats(-9.9, -0.1))
@settings(max_examples=40, deadline=None)
def test_slope_matches_finite_difference(z):
    p = WidthProfile.tabulated([-10, -6, -3, 0], [1.0, 1.3, 1.7, 2.0])
    h = 1e-6
    fd = (p.d_at(z + h) - p.d_at(z - h)) / (2 * h)
    assert p.d_prime_at(z) == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_bad_profiles_rejected():
    with pytest.raises(ValidationError):
        WidthProfile.linear(0.0, -1.0, 1.0, 2.0)
    with pytest.raises(ValidationError):
        WidthProfile.linear(-1.0, 0.0, 2.0, 1.0)
    with pytest.raises(ValidationError):
        WidthProfile.constant(-1.0)


def test_mode_count_snaps_on_threshold():
    assert mode_count(K, 20.0) == 40
    assert mode_count(K, 20.0 * (1 - 1e-14)) == 40
    assert mode_count(K, 19.99) == 39
    assert mode_count(K, 20.25) == 40


def test_preset_layout(preset_layout):
    lay = preset_layout
    assert len(lay.left_turning_points) == 1
    assert lay.left_turning_points[0] == pytest.approx(-1000.0, abs=1e-6)
    assert (lay.n0, lay.n_min, lay.n_max) == (40, 39, 40)
    left = lay.left_sectors()
    assert [s.n_modes for s in left] == [40, 39]
    assert left[0].left_turning and not left[0].right_turning
    assert left[1].right_turning and not left[1].left_turning
    assert left[1].z_left == -1000.5


@given(st.floats(1.2, 3.0), st.floats(3.1, 5.0))
@settings(max_examples=30, deadline=None)
def test_turning_points_sit_on_integer_thresholds(d0, d1):
    p = WidthProfile.linear(-50.0, 50.0, d0, d1)
    x0 = K * p.d_at(0.0) / math.pi
    if abs(x0 - round(x0)) < 1e-3:
        return
    lay = find_turning_points(K, p, 60.0)
    assert lay.n0 == math.floor(x0)
    for i, z in enumerate(lay.left_turning_points):
        assert K * p.d_at(z) / math.pi == pytest.approx(lay.n0 - i, abs=1e-9)
    for i, z in enumerate(lay.right_turning_points):
        assert K * p.d_at(z) / math.pi == pytest.approx(lay.n0 + 1 + i, abs=1e-9)
    assert list(lay.left_turning_points) == sorted(lay.left_turning_points, reverse=True)
    assert lay.n_min == lay.n0 - len(lay.left_turning_points)
    sectors = lay.left_sectors() + lay.right_sectors()
    assert sum(s.length for s in sectors) == pytest.approx(120.0)


def test_source_on_threshold_rejected():
    p = WidthProfile.linear(-10.0, 10.0, 19.0, 21.0)
    with pytest.raises(SourceOnTurningPoint):
        find_turning_points(K, p, 20.0)


def test_nonmonotone_table_rejected():
    with pytest.raises((NonMonotoneProfile, ValidationError)):
        WidthProfile.piecewise_linear([-2.0, -1.0, 0.0], [1.0, 1.5, 1.2])


def test_airy_length_formula(preset_profile):
    z = -500.0
    d, dp = evaluate_width(preset_profile, z)
    assert airy_length(K, preset_profile, z) == pytest.approx((2 * K * K * dp / d) ** (-1 / 3))
    with pytest.raises(NonMonotoneProfile):
        airy_length(K, preset_profile, 10.0)
