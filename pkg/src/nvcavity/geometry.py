"""Axisymmetric cavity geometry and its finite-difference grid.

All lengths are in metres. The coordinate origin sits on the symmetry axis in
the open bottom plane of the shield; ``z`` grows upward into the cavity and the
modeled air region below the cavity has ``z < 0``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigError, ResolutionTooCoarse

MM = 1e-3

# Relative slack used when comparing node coordinates with region boundaries,
# so that nodes meant to sit exactly on a boundary are not lost to rounding.
_SNAP = 1e-9


class Region(IntEnum):
    AMBIENT = 0
    DIELECTRIC = 1
    METAL = 2


@dataclass(frozen=True)
class Material:
    relative_permittivity: float = 1.0
    loss_tangent: float = 0.0

    def __post_init__(self):
        if not self.relative_permittivity >= 1.0:
            raise ValueError(
                f"relative_permittivity must be >= 1, got {self.relative_permittivity}")
        if not self.loss_tangent >= 0.0:
            raise ValueError(f"loss_tangent must be >= 0, got {self.loss_tangent}")


VACUUM = Material(1.0, 0.0)


@dataclass(frozen=True)
class CavityGeometry:
    """Cross-section of the shielded dielectric-ring resonator.

    ``ring_bottom`` and ``ring_top`` are heights above the open bottom plane.
    ``plunger_depth`` is the insertion of the coaxial metal plunger measured
    down from the top plate. ``bottom_closed`` replaces the open bottom with a
    metal plate at ``z = 0``; it exists for validation against the empty
    metallic cylinder.
    """

    shield_radius: float = 16 * MM
    shield_height: float = 20 * MM
    ring_inner_radius: float = 5 * MM
    ring_outer_radius: float = 9 * MM
    ring_bottom: float = 1 * MM
    ring_top: float = 13 * MM
    plunger_radius: float = 12 * MM
    plunger_depth: float = 0.0
    bottom_extension: float = 10 * MM
    dielectric: Material = field(default_factory=lambda: Material(100.0, 1e-4))
    ambient: Material = VACUUM
    bottom_closed: bool = False

    def __post_init__(self):
        problems = []
        if not 0 < self.ring_inner_radius < self.ring_outer_radius < self.shield_radius:
            problems.append("need 0 < ring_inner_radius < ring_outer_radius < shield_radius")
        if not 0 <= self.ring_bottom < self.ring_top <= self.shield_height:
            problems.append("need 0 <= ring_bottom < ring_top <= shield_height")
        if not 0 < self.plunger_radius < self.shield_radius:
            problems.append("need 0 < plunger_radius < shield_radius")
        if not 0 <= self.plunger_depth <= self.max_plunger_depth * (1 + _SNAP):
            problems.append("need 0 <= plunger_depth <= shield_height - ring_top")
        if not self.bottom_extension > 0:
            problems.append("need bottom_extension > 0")
        if problems:
            raise ValueError("invalid CavityGeometry: " + "; ".join(problems))

    @property
    def max_plunger_depth(self) -> float:
        return self.shield_height - self.ring_top

    @property
    def ring_mean_radius(self) -> float:
        return 0.5 * (self.ring_inner_radius + self.ring_outer_radius)

    @property
    def ring_area(self) -> float:
        return ((self.ring_outer_radius - self.ring_inner_radius)
                * (self.ring_top - self.ring_bottom))

    def replace(self, **changes) -> "CavityGeometry":
        if "relative_permittivity" in changes:
            eps = changes.pop("relative_permittivity")
            changes["dielectric"] = dataclasses.replace(
                changes.get("dielectric", self.dielectric), relative_permittivity=eps)
        return dataclasses.replace(self, **changes)


def default_geometry() -> CavityGeometry:
    """Starting point for calibration against the measured mode frequencies.

    Only the shield dimensions are fixed by the hardware; the ring dimensions
    and permittivity are tunable guesses.
    """
    return CavityGeometry()


def hollow_geometry(radius: float = 16 * MM, height: float = 20 * MM) -> CavityGeometry:
    """Closed, empty metallic cylinder (dielectric set to vacuum)."""
    base = CavityGeometry(shield_radius=radius, shield_height=height)
    return base.replace(dielectric=VACUUM, bottom_closed=True,
                        ring_inner_radius=0.25 * radius, ring_outer_radius=0.5 * radius,
                        ring_bottom=0.0, ring_top=0.5 * height)


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Uniform node grid over ``r in [0, R]``, ``z in [-bottom_extension, H]``.

    ``region`` holds one :class:`Region` tag per node (indexed ``[i, j]`` with
    ``i`` radial). ``eps`` is the relative permittivity averaged over each
    node's cell, so that material boundaries falling between nodes still move
    the spectrum continuously. ``gap_above`` is the distance from a node to
    the plunger face directly above it (``inf`` where there is none), used for
    the sub-cell plunger boundary.
    """

    geometry: CavityGeometry
    nr: int
    nz: int
    dr: float
    dz: float
    z0: float
    region: np.ndarray
    eps: np.ndarray
    gap_above: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.nr) * self.dr

    @property
    def z(self) -> np.ndarray:
        return self.z0 + np.arange(self.nz) * self.dz

    def r_of(self, i: int) -> float:
        return i * self.dr

    def z_of(self, j: int) -> float:
        return self.z0 + j * self.dz

    def region_of(self, i: int, j: int) -> Region:
        return Region(int(self.region[i, j]))

    def index_of_z(self, z: float) -> float:
        """Fractional node index of height ``z``."""
        return (z - self.z0) / self.dz

    @property
    def dirichlet(self) -> np.ndarray:
        """Mask of nodes where the azimuthal field is forced to zero."""
        mask = self.region == Region.METAL
        mask[0, :] = True
        mask[-1, :] = True
        mask[:, 0] = True
        mask[:, -1] = True
        return mask

    def dielectric_area(self) -> float:
        """Summed r-z area of dielectric-tagged cells."""
        return float(np.count_nonzero(self.region == Region.DIELECTRIC) * self.dr * self.dz)


def _overlap(centers, half, lo, hi, clip_lo=-np.inf, clip_hi=np.inf):
    """Fraction of each cell ``[c - half, c + half]`` (clipped) inside ``[lo, hi]``."""
    a = np.maximum(centers - half, clip_lo)
    b = np.minimum(centers + half, clip_hi)
    width = b - a
    inside = np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None)
    return inside / width


def rasterize(geometry: CavityGeometry, resolution: float) -> Grid2D:
    """Tag every grid node by the region containing it.

    Raises
    ------
    ResolutionTooCoarse
        If the ring cross-section would be narrower than four cells in
        either direction.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    g = geometry
    z_lo = -g.bottom_extension
    nr = int(round(g.shield_radius / resolution)) + 1
    nz = int(round((g.shield_height - z_lo) / resolution)) + 1
    if nr < 3 or nz < 3:
        raise ResolutionTooCoarse(f"resolution {resolution} leaves a {nr}x{nz} grid")
    dr = g.shield_radius / (nr - 1)
    dz = (g.shield_height - z_lo) / (nz - 1)
    ring_w = g.ring_outer_radius - g.ring_inner_radius
    ring_h = g.ring_top - g.ring_bottom
    if ring_w < 4 * dr * (1 - _SNAP) or ring_h < 4 * dz * (1 - _SNAP):
        raise ResolutionTooCoarse(
            f"ring spans {ring_w / dr:.2f} x {ring_h / dz:.2f} cells at "
            f"dr={dr:.3g} m, dz={dz:.3g} m; at least 4 x 4 required")

    r = np.arange(nr) * dr
    z = z_lo + np.arange(nz) * dz
    R, Z = np.meshgrid(r, z, indexing="ij")
    tr, tz = _SNAP * dr, _SNAP * dz

    region = np.full((nr, nz), Region.AMBIENT, dtype=np.int8)
    in_ring = ((R >= g.ring_inner_radius - tr) & (R < g.ring_outer_radius - tr)
               & (Z >= g.ring_bottom - tz) & (Z < g.ring_top - tz))
    region[in_ring] = Region.DIELECTRIC

    metal = (R >= g.shield_radius - tr) & (Z >= -tz)
    metal |= Z >= g.shield_height - tz
    face = g.shield_height - g.plunger_depth
    metal |= (R <= g.plunger_radius + tr) & (Z >= face - tz)
    if g.bottom_closed:
        metal |= Z <= tz
    region[metal] = Region.METAL

    fr = _overlap(r, dr / 2, g.ring_inner_radius, g.ring_outer_radius, 0.0, g.shield_radius)
    fz = _overlap(z, dz / 2, g.ring_bottom, g.ring_top, z_lo, g.shield_height)
    frac = np.outer(fr, fz)
    eps_d = g.dielectric.relative_permittivity
    eps_a = g.ambient.relative_permittivity
    eps = eps_a + (eps_d - eps_a) * frac

    gap = np.full((nr, nz), np.inf)
    if g.plunger_depth > 0:
        under = (R <= g.plunger_radius + tr) & (Z < face - tz)
        gap[under] = face - Z[under]

    for arr in (region, eps, gap):
        arr.setflags(write=False)
    return Grid2D(geometry=g, nr=nr, nz=nz, dr=dr, dz=dz, z0=z_lo,
                  region=region, eps=eps, gap_above=gap)


def geometry_from_mapping(data: dict, base: CavityGeometry | None = None) -> CavityGeometry:
    """Build a geometry from a config mapping with lengths in millimetres.

    Unknown keys raise :class:`ConfigError`.
    """
    base = base or default_geometry()
    lengths = {"shield_radius", "shield_height", "ring_inner_radius", "ring_outer_radius",
               "ring_bottom", "ring_top", "plunger_radius", "plunger_depth",
               "bottom_extension"}
    materials = {"dielectric", "ambient"}
    changes = {}
    for key, value in data.items():
        if key in lengths:
            changes[key] = _number(key, value) * MM
        elif key in materials:
            if not isinstance(value, dict):
                raise ConfigError(f"geometry.{key} must be a table")
            unknown = set(value) - {"relative_permittivity", "loss_tangent"}
            if unknown:
                raise ConfigError(f"unknown keys in geometry.{key}: {sorted(unknown)}")
            current = getattr(base, key)
            try:
                changes[key] = Material(
                    _number(f"{key}.relative_permittivity",
                            value.get("relative_permittivity", current.relative_permittivity)),
                    _number(f"{key}.loss_tangent", value.get("loss_tangent", current.loss_tangent)))
            except ValueError as exc:
                raise ConfigError(f"geometry.{key}: {exc}") from exc
        elif key == "bottom_closed":
            if not isinstance(value, bool):
                raise ConfigError("geometry.bottom_closed must be a boolean")
            changes[key] = value
        else:
            raise ConfigError(f"unknown key in geometry section: {key!r}")
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def geometry_to_mapping(geometry: CavityGeometry) -> dict:
    """Inverse of :func:`geometry_from_mapping` (millimetre lengths)."""
    out = {}
    for f in dataclasses.fields(geometry):
        value = getattr(geometry, f.name)
        if isinstance(value, Material):
            out[f.name] = dataclasses.asdict(value)
        elif isinstance(value, bool):
            out[f.name] = value
        else:
            out[f.name] = value / MM
    return out


def _number(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)
