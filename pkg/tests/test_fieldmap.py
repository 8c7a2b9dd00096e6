import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcavity.errors import DegenerateRatio, OffsetOutsideDomain
from nvcavity.fieldmap import (NORMALIZATION_FLOOR, field_at, field_ratio, fields_at, interpolate,
                               peak_radius, protocol_positions, sample_plane)
from nvcavity.geometry import MM
from oracles import bilinear


def test_axis_values(te013):
    plane = sample_plane(te013, 1 * MM)
    assert plane.radii[0] == 0.0
    assert plane.h_r[0] == 0.0
    assert abs(plane.normalized_h_z[0]) == pytest.approx(1.0, abs=1e-15)


def test_peak_near_ring_mean_radius(te013):
    plane = sample_plane(te013, 1 * MM, np.linspace(0, 16 * MM, 641))
    assert abs(plane.peak_h_r_radius - 7 * MM) <= 2 * MM


def test_radial_component_dominates_at_peak(te013):
    plane = sample_plane(te013, 1 * MM)
    k = int(np.argmax(np.abs(plane.h_r)))
    assert abs(plane.normalized_h_r[k]) > abs(plane.normalized_h_z[k])


@pytest.mark.parametrize("offset", [0.0, 0.5 * MM, 1 * MM, 3 * MM, 10 * MM])
def test_normalization_invariant(te013, offset):
    plane = sample_plane(te013, offset)
    mag = plane.magnitude
    ok = mag > NORMALIZATION_FLOOR * mag.max()
    assert np.allclose(plane.normalized_h_r[ok] ** 2 + plane.normalized_h_z[ok] ** 2, 1.0, atol=1e-12)
    assert np.all(plane.normalized_h_r[~ok] == 0) and np.all(plane.normalized_h_z[~ok] == 0)


def test_node_interpolation_is_exact(te013):
    g = te013.grid
    j = int(round(g.index_of_z(-1 * MM)))
    plane = sample_plane(te013, -g.z[j])
    assert np.array_equal(plane.h_z, te013.h_z[:, j])
    assert np.array_equal(plane.h_r[1:], te013.h_r[1:, j])


@settings(max_examples=60, deadline=None)
@given(r=st.floats(0, 16e-3), z=st.floats(-10e-3, 20e-3))
def test_interpolation_matches_oracle(te013, r, z):
    g = te013.grid
    ours = float(interpolate(te013, "h_z", np.array([r]), np.array([z]))[0])
    ref = bilinear(g.r, g.z, te013.h_z, r, z)
    assert ours == pytest.approx(ref, rel=1e-9, abs=1e-9 * np.abs(te013.h_z).max())


def test_axis_smoothness(te013):
    for offset in (0.5 * MM, 1 * MM, 2 * MM):
        plane = sample_plane(te013, offset)
        slope = np.abs(np.diff(plane.h_z)) / np.diff(plane.radii)
        # one-sided difference at the axis is small against the steepest slope
        assert slope[0] < 0.05 * slope.max()


def test_evanescent_decay(te013):
    offsets = np.linspace(0.5, 5.0, 19) * MM
    mags = [np.hypot(*field_at(te013, (7 * MM, 0, z))[[0, 2]]) for z in offsets]
    assert all(b < a for a, b in zip(mags, mags[1:]))


def test_field_on_axis(te013):
    h = field_at(te013, (0.0, 0.0, 1 * MM))
    assert h[0] == 0 and h[1] == 0 and h[2] != 0


def test_field_under_ring_is_radial(te013):
    h = field_at(te013, (7 * MM, 0.0, 1 * MM))
    assert abs(h[0]) > abs(h[2]) and h[1] == 0


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-11e-3, 11e-3), y=st.floats(-11e-3, 11e-3), z=st.floats(0, 5e-3),
       angle=st.floats(0, 2 * math.pi))
def test_rotation_covariance(te013, x, y, z, angle):
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    h = field_at(te013, (x, y, z))
    hr = field_at(te013, (c * x - s * y, s * x + c * y, z))
    scale = np.abs(te013.h_z).max()
    assert np.allclose(hr, rot @ h, atol=1e-9 * scale, rtol=1e-7)


def test_fields_at_vectorized(te013):
    pts = protocol_positions(7 * MM, 1 * MM, (0.3, 1.9))
    batch = fields_at(te013, pts)
    for p, h in zip(pts, batch):
        assert np.array_equal(h, field_at(te013, p))


def test_ratio_finite_nonzero_and_sign_invariant(te013):
    rho = field_ratio(te013, 1 * MM)
    assert math.isfinite(rho) and rho != 0
    assert field_ratio(te013.flipped(), 1 * MM) == rho


def test_ratio_zero_when_axial_field_vanishes(te013):
    fake = dataclasses.replace(te013, h_z=np.zeros_like(te013.h_z))
    assert field_ratio(fake, 1 * MM) == 0.0


def test_ratio_degenerate_without_radial_field(te013):
    fake = dataclasses.replace(te013, h_r=np.zeros_like(te013.h_r))
    with pytest.raises(DegenerateRatio):
        field_ratio(fake, 1 * MM)


def test_peak_radius_refinement(te013):
    plane = sample_plane(te013, 1 * MM)
    assert abs(peak_radius(te013, 1 * MM) - plane.peak_h_r_radius) <= te013.grid.dr


@pytest.mark.parametrize("offset", [-0.1 * MM, 10.5 * MM])
def test_offset_outside_domain(te013, offset):
    with pytest.raises(OffsetOutsideDomain):
        sample_plane(te013, offset)


def test_radius_outside_domain(te013):
    with pytest.raises(OffsetOutsideDomain):
        field_at(te013, (12 * MM, 12 * MM, 1 * MM))


def test_protocol_positions():
    pts = protocol_positions(7 * MM, 1 * MM)
    assert np.allclose(pts, [[0, 0, 1 * MM], [7 * MM, 0, 1 * MM], [0, 7 * MM, 1 * MM]], atol=1e-18)
