import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcavity.errors import ConfigError, ResolutionTooCoarse
from nvcavity.geometry import (MM, VACUUM, CavityGeometry, Material, Region, default_geometry,
                               geometry_from_mapping, geometry_to_mapping, hollow_geometry,
                               rasterize)
from oracles import annulus_area


def test_default_dimensions():
    g = default_geometry()
    assert g.shield_radius == pytest.approx(16 * MM)
    assert g.shield_height == pytest.approx(20 * MM)
    assert g.ring_mean_radius == pytest.approx(7 * MM)


def test_default_satisfies_invariants():
    g = default_geometry()
    assert 0 < g.ring_inner_radius < g.ring_outer_radius < g.shield_radius
    assert 0 <= g.ring_bottom < g.ring_top <= g.shield_height
    assert 0 <= g.plunger_depth <= g.shield_height - g.ring_top
    assert g.bottom_extension > 0
    assert g.plunger_radius < g.shield_radius
    assert g.max_plunger_depth == pytest.approx(g.shield_height - g.ring_top)


@pytest.mark.parametrize("changes", [
    dict(ring_inner_radius=10 * MM),                     # inner > outer
    dict(ring_outer_radius=17 * MM),                     # outside shield
    dict(ring_top=21 * MM),
    dict(ring_bottom=-1 * MM),
    dict(plunger_depth=8 * MM),                          # would hit the ring
    dict(bottom_extension=0.0),
    dict(plunger_radius=16 * MM),
])
def test_invalid_geometry_rejected(changes):
    with pytest.raises(ValueError):
        dataclasses.replace(default_geometry(), **changes)


@pytest.mark.parametrize("eps, tan", [(0.5, 0.0), (2.0, -1e-3)])
def test_material_invariants(eps, tan):
    with pytest.raises(ValueError):
        Material(eps, tan)


def test_vacuum():
    assert VACUUM.relative_permittivity == 1.0
    assert VACUUM.loss_tangent == 0.0


def test_node_counts(default_grid):
    # 16 mm x 30 mm at 0.25 mm spacing, inclusive
    assert (default_grid.nr, default_grid.nz) == (65, 121)
    assert default_grid.r[0] == 0.0


def test_axis_node_is_ambient(default_grid):
    j = default_grid.index_of_z(10 * MM)
    assert j == pytest.approx(round(j))
    assert default_grid.region_of(0, int(round(j))) == Region.AMBIENT


def test_too_coarse():
    with pytest.raises(ResolutionTooCoarse):
        rasterize(default_geometry(), 20 * MM)


def test_metal_tags(default_grid):
    g = default_grid
    metal = g.region == Region.METAL
    assert metal[-1, g.z >= 0].all()            # shield wall
    assert not metal[-1, g.z < -1e-12].any()    # open bottom
    assert metal[:, -1].all()                    # top plate
    assert (g.region != Region.METAL)[:-1, g.z < 0].all()


def test_every_node_has_one_tag(default_grid):
    assert set(np.unique(default_grid.region)) <= {int(r) for r in Region}
    assert default_grid.region.shape == (default_grid.nr, default_grid.nz)


def test_idempotent():
    a = rasterize(default_geometry(), 0.5 * MM)
    b = rasterize(default_geometry(), 0.5 * MM)
    assert np.array_equal(a.region, b.region)
    assert np.array_equal(a.eps, b.eps)


@pytest.mark.parametrize("ring", [(5 * MM, 9 * MM, 1 * MM, 13 * MM),
                                  (5.1 * MM, 9.07 * MM, 1.13 * MM, 12.9 * MM)])
def test_dielectric_area_converges(ring):
    ri, ro, zb, zt = ring
    g = default_geometry().replace(ring_inner_radius=ri, ring_outer_radius=ro,
                                   ring_bottom=zb, ring_top=zt)
    exact = annulus_area(ri, ro, zb, zt)
    errs = [abs(rasterize(g, h * MM).dielectric_area() - exact) / exact
            for h in (0.25, 0.125, 0.0625)]
    assert errs[-1] < 0.02


def test_cell_averaged_permittivity_integrates_to_ring_area():
    g = default_geometry().replace(ring_inner_radius=5.1 * MM, ring_outer_radius=9.07 * MM)
    grid = rasterize(g, 0.25 * MM)
    frac = (grid.eps - 1.0) / (g.dielectric.relative_permittivity - 1.0)
    exact = annulus_area(5.1 * MM, 9.07 * MM, g.ring_bottom, g.ring_top)
    assert np.sum(frac) * grid.dr * grid.dz == pytest.approx(exact, rel=1e-9)


def test_plunger_changes_only_footprint():
    g0 = default_geometry()
    a = rasterize(g0, 0.25 * MM)
    b = rasterize(g0.replace(plunger_depth=1.3 * MM), 0.25 * MM)
    changed = (a.region != b.region) | (a.gap_above != b.gap_above) | (a.eps != b.eps)
    assert changed.any()
    assert np.all(a.r[np.nonzero(changed)[0]] <= g0.plunger_radius + 1e-12)


def test_grid_arrays_read_only(default_grid):
    with pytest.raises(ValueError):
        default_grid.region[0, 0] = 2


def test_hollow_geometry_is_vacuum_closed():
    g = hollow_geometry()
    assert g.bottom_closed and g.dielectric.relative_permittivity == 1.0
    grid = rasterize(g, 0.5 * MM)
    assert np.all(grid.eps == 1.0)
    assert np.all(grid.region[:, grid.z <= 1e-12] == Region.METAL)


def test_mapping_round_trip():
    g = default_geometry().replace(ring_top=12.5 * MM, relative_permittivity=150.0)
    back = geometry_from_mapping(geometry_to_mapping(g))
    assert back == g


@pytest.mark.parametrize("data", [
    {"shield_radius": "16"}, {"nonsense": 1}, {"dielectric": 3.0},
    {"dielectric": {"relative_permittivity": 0.2}}, {"dielectric": {"sigma": 1}},
    {"bottom_closed": 1}, {"ring_top": 50.0},
])
def test_mapping_fail_closed(data):
    with pytest.raises(ConfigError):
        geometry_from_mapping(data)


@settings(max_examples=25, deadline=None)
@given(ri=st.floats(2.0, 6.0), w=st.floats(2.0, 6.0), zb=st.floats(0.0, 3.0), h=st.floats(3.0, 12.0),
       depth_frac=st.floats(0.0, 1.0))
def test_rasterize_properties(ri, w, zb, h, depth_frac):
    g = CavityGeometry(ring_inner_radius=ri * MM, ring_outer_radius=(ri + w) * MM,
                       ring_bottom=zb * MM, ring_top=(zb + h) * MM)
    g = g.replace(plunger_depth=depth_frac * g.max_plunger_depth)
    grid = rasterize(g, 0.5 * MM)
    i, j = np.nonzero(grid.region == Region.DIELECTRIC)
    assert np.all((grid.r[i] >= g.ring_inner_radius - 1e-12) & (grid.r[i] < g.ring_outer_radius))
    assert np.all((grid.z[j] >= g.ring_bottom - 1e-12) & (grid.z[j] < g.ring_top))
    assert np.all(grid.eps >= 1.0) and np.all(grid.eps <= g.dielectric.relative_permittivity + 1e-9)
    assert grid.dirichlet[0].all() and grid.dirichlet[-1].all()
    exact = annulus_area(g.ring_inner_radius, g.ring_outer_radius, g.ring_bottom, g.ring_top)
    assert abs(grid.dielectric_area() - exact) / exact < 0.3
