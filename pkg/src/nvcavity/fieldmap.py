"""Magnetic field of a solved mode below the open cavity bottom."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateRatio, OffsetOutsideDomain
from .modesolver import ModeSolution

# Below this fraction of the plane maximum the field direction is undefined.
NORMALIZATION_FLOOR = 1e-9
_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class FieldPlane:
    """Radial profile of ``h_r`` and ``h_z`` at ``z_offset`` below the cavity.

    The ``normalized_*`` arrays divide by the local ``sqrt(h_r**2 + h_z**2)``
    and are zero where that magnitude is under the floor.
    """

    z_offset: float
    radii: np.ndarray
    h_r: np.ndarray
    h_z: np.ndarray
    normalized_h_r: np.ndarray
    normalized_h_z: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.h_r, self.h_z)

    @property
    def peak_h_r_radius(self) -> float:
        return float(self.radii[np.argmax(np.abs(self.h_r))])


def _fractional(x, origin, step, n):
    """Cell index and weight for linear interpolation, snapping onto nodes."""
    t = (np.asarray(x, dtype=float) - origin) / step
    near = np.rint(t)
    t = np.where(np.abs(t - near) < _SNAP, near, t)
    i = np.clip(np.floor(t).astype(int), 0, n - 2)
    return i, t - i


def interpolate(mode: ModeSolution, name: str, r, z) -> np.ndarray:
    """Bilinear interpolation of a mode field at points ``(r, z)`` in metres."""
    g = mode.grid
    arr = getattr(mode, name)
    i, a = _fractional(r, 0.0, g.dr, g.nr)
    j, b = _fractional(z, g.z0, g.dz, g.nz)
    return ((1 - a) * (1 - b) * arr[i, j] + a * (1 - b) * arr[i + 1, j]
            + (1 - a) * b * arr[i, j + 1] + a * b * arr[i + 1, j + 1])


def _check_offset(mode: ModeSolution, z_offset: float):
    ext = mode.grid.geometry.bottom_extension
    if not 0.0 <= z_offset <= ext:
        raise OffsetOutsideDomain(
            f"z_offset {z_offset * 1e3:.3f} mm outside [0, {ext * 1e3:.3f}] mm")


def _check_radii(mode: ModeSolution, radii: np.ndarray):
    R = mode.grid.geometry.shield_radius
    if np.any(radii < 0) or np.any(radii > R * (1 + _SNAP)):
        raise OffsetOutsideDomain(f"radii must lie in [0, {R * 1e3:.3f}] mm")


def sample_plane(mode: ModeSolution, z_offset: float, radii: Sequence[float] | None = None) -> FieldPlane:
    """Field profile on the plane ``z_offset`` below the bottom edge.

    ``radii`` defaults to the grid's radial nodes.
    """
    _check_offset(mode, z_offset)
    radii = mode.grid.r.copy() if radii is None else np.asarray(radii, dtype=float)
    _check_radii(mode, radii)
    z = np.full_like(radii, -z_offset)
    h_r = interpolate(mode, "h_r", radii, z)
    h_z = interpolate(mode, "h_z", radii, z)
    h_r[radii == 0] = 0.0
    mag = np.hypot(h_r, h_z)
    ok = mag > NORMALIZATION_FLOOR * mag.max() if mag.size and mag.max() > 0 else np.zeros_like(mag, bool)
    nr = np.zeros_like(h_r)
    nz = np.zeros_like(h_z)
    nr[ok] = h_r[ok] / mag[ok]
    nz[ok] = h_z[ok] / mag[ok]
    return FieldPlane(z_offset, radii, h_r, h_z, nr, nz)


def field_at(mode: ModeSolution, position) -> np.ndarray:
    """Cartesian ``(h_x, h_y, h_z)`` at ``(x, y, z_offset)``."""
    return fields_at(mode, np.asarray(position, dtype=float)[None, :])[0]


def fields_at(mode: ModeSolution, positions) -> np.ndarray:
    """Vectorized :func:`field_at` over an ``(N, 3)`` array of positions."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    x, y, zo = pos[:, 0], pos[:, 1], pos[:, 2]
    ext = mode.grid.geometry.bottom_extension
    if np.any(zo < 0) or np.any(zo > ext):
        raise OffsetOutsideDomain(f"z_offset outside [0, {ext * 1e3:.3f}] mm")
    r = np.hypot(x, y)
    _check_radii(mode, r)
    h_r = interpolate(mode, "h_r", r, -zo)
    h_z = interpolate(mode, "h_z", r, -zo)
    out = np.zeros((len(pos), 3))
    on_axis = r == 0
    safe = np.where(on_axis, 1.0, r)
    out[:, 0] = np.where(on_axis, 0.0, h_r * x / safe)
    out[:, 1] = np.where(on_axis, 0.0, h_r * y / safe)
    out[:, 2] = h_z
    return out


def field_ratio(mode: ModeSolution, z_offset: float) -> float:
    """``h_z`` on the axis divided by ``h_r`` at the radius where ``|h_r|`` peaks."""
    plane = sample_plane(mode, z_offset)
    k = int(np.argmax(np.abs(plane.h_r)))
    peak = abs(plane.h_r[k])
    if peak < NORMALIZATION_FLOOR * plane.magnitude.max() or peak == 0.0:
        raise DegenerateRatio("radial field vanishes on this plane")
    # default radii start on the axis
    return float(plane.h_z[0] / plane.h_r[k])


def peak_radius(mode: ModeSolution, z_offset: float) -> float:
    """Radius of maximum ``|h_r|`` on the plane, refined by a parabola
    through the three nodes around the discrete peak."""
    plane = sample_plane(mode, z_offset)
    a = np.abs(plane.h_r)
    k = int(np.argmax(a))
    if 0 < k < len(a) - 1:
        y0, y1, y2 = a[k - 1], a[k], a[k + 1]
        denom = y0 - 2 * y1 + y2
        if denom != 0:
            shift = 0.5 * (y0 - y2) / denom
            return float(plane.radii[k] + shift * (plane.radii[k + 1] - plane.radii[k]))
    return float(plane.radii[k])


def protocol_positions(r_star: float, z_offset: float, azimuths=(0.0, math.pi / 2)) -> np.ndarray:
    """Cavity center plus points at radius ``r_star`` and the given azimuths."""
    pts = [(0.0, 0.0, z_offset)]
    pts += [(r_star * math.cos(p), r_star * math.sin(p), z_offset) for p in azimuths]
    return np.array(pts)
