"""Run configuration: TOML files with millimetre lengths and GHz frequencies.

Parsing is fail-closed. Unknown sections or keys, wrong types and missing
required sections all raise :class:`ConfigError` before any computation runs.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .geometry import CavityGeometry, default_geometry, geometry_from_mapping
from .modesolver import CALIBRATION_PARAMS
from .nvodmr import NVCenter, parse_power, unit

MM = 1e-3
GHZ = 1e9
MHZ = 1e6


# Keys each section accepts, with a short description used in --help output.
SECTION_KEYS = {
    "geometry": {
        "shield_radius": "mm", "shield_height": "mm", "ring_inner_radius": "mm",
        "ring_outer_radius": "mm", "ring_bottom": "mm", "ring_top": "mm",
        "plunger_radius": "mm", "plunger_depth": "mm", "bottom_extension": "mm",
        "bottom_closed": "bool, metal plate at the bottom plane",
        "dielectric": "table: relative_permittivity, loss_tangent",
        "ambient": "table: relative_permittivity, loss_tangent",
    },
    "solver": {
        "resolution_mm": "grid spacing (default 0.25)",
        "count": "number of modes (default 6)",
        "window_ghz": "[low, high] frequency window (default [1, 4])",
    },
    "nv": {
        "axis": "[x, y, z] spin axis, normalized on load (default [0, 0, 1])",
        "d_splitting_ghz": "zero-field splitting (default 2.87)",
        "strain_mhz": "strain splitting E (default 0)",
        "hyperfine_mhz": "hyperfine constant, 0 disables (default 0)",
        "linewidth_mhz": "Lorentzian FWHM (default 10)",
        "contrast_ceiling": "saturated contrast (default 0.12)",
        "p_sat": "saturation power, e.g. '5dBm' or 0.00316 (W)",
    },
    "tune": {
        "mode": "[n, p] mode to track (default [1, 3])",
        "depths_mm": "explicit plunger depths",
        "steps": "number of equally spaced depths over the stroke (default 15)",
        "target_ghz": "optional: also solve for the depth reaching this frequency",
    },
    "fieldmap": {
        "mode": "[n, p] (default [1, 3])",
        "offsets_mm": "plane offsets below the cavity (default [1.0])",
        "radius_step_mm": "radial sample spacing (default: grid spacing)",
        "cartesian_points_mm": "list of [x, y, z_offset] points for Cartesian samples",
    },
    "odmr": {
        "start_ghz": "sweep start", "stop_ghz": "sweep stop", "points": "number of samples",
        "field": "[hx, hy, hz] drive field in mode units (or use position_mm)",
        "position_mm": "[x, y, z_offset] below the cavity; needs [geometry]",
        "mode": "[n, p] mode used with position_mm (default [1, 3])",
        "drive_power": "drive power, '<x>dBm' or '<x>W'",
        "saturation": "alternative to drive_power: saturation parameter at the NV",
        "noise_sigma": "Gaussian noise s.d. on fluorescence (default 0)",
        "n_lines": "lines to fit (default: number of resonance lines)",
        "input_csv": "fit this measured spectrum instead of synthesizing one",
        "saturation_powers_dbm": "powers at the NV (unit coupling) for the saturation curve",
    },
    "scan": {
        "mode": "[n, p] (default [1, 3])",
        "start_mm": "default -12", "stop_mm": "default 12", "step_mm": "default 1",
        "z_offset_mm": "default 1", "axis": "'x' or 'y' (default 'x')",
        "drive_power": "'<x>dBm' or '<x>W'",
        "saturation": "alternative to drive_power: peak saturation on the path (default 0.01)",
        "normalize": "max-normalize contrasts (default true)",
    },
    "invert": {
        "c_center": "contrast on the cavity axis", "c_a": "contrast at azimuth phi_a",
        "c_b": "contrast at azimuth phi_b",
        "rho": "h_z(0) / h_r(r*); if omitted it is computed from [geometry]",
        "mode": "[n, p] used when rho is computed (default [1, 3])",
        "z_offset_mm": "plane offset used when rho is computed (default 1)",
        "phi_a_deg": "default 0", "phi_b_deg": "default 90",
        "method": "'closed' or 'least_squares' (default 'closed')",
        "extra": "list of [phi_deg, contrast] extra circumference points (least_squares)",
    },
    "calibrate": {
        "targets": "list of {n, p, frequency_ghz}",
        "free": f"parameters to adjust, subset of {list(CALIBRATION_PARAMS)}",
        "max_sweeps": "default 50",
    },
}
TOP_LEVEL_KEYS = {"out": "output directory (overridden by --out)"}


@dataclass
class SolverConfig:
    resolution: float = 0.25 * MM
    count: int = 6
    window: tuple = (1 * GHZ, 4 * GHZ)


@dataclass
class RunConfig:
    raw: dict
    geometry: CavityGeometry | None
    solver: SolverConfig
    nv: NVCenter
    out: str | None = None
    sections: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def require(self, *names: str):
        missing = [n for n in names if n not in self.raw]
        if missing:
            raise ConfigError(f"missing config section(s): {', '.join('[' + m + ']' for m in missing)}")
        if "geometry" in names and self.geometry is None:
            raise ConfigError("missing config section: [geometry]")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    for key, value in data.items():
        if key in TOP_LEVEL_KEYS:
            continue
        if key not in SECTION_KEYS:
            raise ConfigError(f"unknown config section or key: {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table")
        unknown = set(value) - set(SECTION_KEYS[key])
        if unknown:
            raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a string")
    geometry = geometry_from_mapping(data["geometry"], default_geometry()) if "geometry" in data else None
    return RunConfig(raw=data, geometry=geometry, solver=_solver(data.get("solver", {})),
                     nv=_nv(data.get("nv", {})), out=out,
                     sections={k: v for k, v in data.items() if isinstance(v, dict)})


def _solver(s: dict) -> SolverConfig:
    cfg = SolverConfig()
    if "resolution_mm" in s:
        cfg.resolution = positive(s, "resolution_mm") * MM
    if "count" in s:
        cfg.count = integer(s, "count", minimum=1)
    if "window_ghz" in s:
        lo, hi = number_list(s, "window_ghz", length=2)
        if not 0 < lo < hi:
            raise ConfigError("solver.window_ghz must be [low, high] with 0 < low < high")
        cfg.window = (lo * GHZ, hi * GHZ)
    return cfg


def _nv(s: dict) -> NVCenter:
    kwargs = {}
    try:
        if "axis" in s:
            kwargs["axis"] = tuple(unit(number_list(s, "axis", length=3)))
        if "d_splitting_ghz" in s:
            kwargs["d_splitting"] = number(s, "d_splitting_ghz") * GHZ
        if "strain_mhz" in s:
            kwargs["strain_e"] = number(s, "strain_mhz") * MHZ
        if "hyperfine_mhz" in s:
            kwargs["hyperfine_a"] = number(s, "hyperfine_mhz") * MHZ
        if "linewidth_mhz" in s:
            kwargs["linewidth_fwhm"] = number(s, "linewidth_mhz") * MHZ
        if "contrast_ceiling" in s:
            kwargs["contrast_ceiling"] = number(s, "contrast_ceiling")
        if "p_sat" in s:
            kwargs["p_sat"] = power(s, "p_sat")
        return NVCenter(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[nv]: {exc}") from exc


# -- typed accessors --------------------------------------------------------

def number(s: dict, key: str, default=None) -> float:
    if key not in s:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    v = s[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite number, got {v!r}")
    return float(v)


def positive(s: dict, key: str, default=None) -> float:
    v = number(s, key, default)
    if not v > 0:
        raise ConfigError(f"{key} must be positive")
    return v


def integer(s: dict, key: str, default=None, minimum=None) -> int:
    if key not in s:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    v = s[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}")
    return v


def number_list(s: dict, key: str, length=None, default=None) -> list:
    if key not in s:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return list(default)
    v = s[key]
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ConfigError(f"{key} must be a list of numbers")
    if length is not None and len(v) != length:
        raise ConfigError(f"{key} must have {length} entries")
    return [float(x) for x in v]


def mode_selector(s: dict, key: str = "mode", default=(1, 3)) -> tuple:
    if key not in s:
        return tuple(default)
    v = s[key]
    if (not isinstance(v, list) or len(v) != 2
            or any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in v)):
        raise ConfigError(f"{key} must be [n, p] with positive integers")
    return tuple(v)


def power(s: dict, key: str, default=None) -> float:
    if key not in s:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    try:
        p = parse_power(s[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    if p < 0:
        raise ConfigError(f"{key} must be >= 0")
    return p


def boolean(s: dict, key: str, default: bool) -> bool:
    v = s.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{key} must be true or false")
    return v


def string(s: dict, key: str, default=None, choices=None) -> str:
    v = s.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(f"{key} must be a string")
    if choices and v not in choices:
        raise ConfigError(f"{key} must be one of {choices}")
    return v


def geometry_toml(geometry: CavityGeometry) -> str:
    """Render a geometry as a ``[geometry]`` TOML section (lengths in mm)."""
    from .geometry import geometry_to_mapping
    data = geometry_to_mapping(geometry)
    lines = ["[geometry]"]
    tables = []
    for key, value in data.items():
        if isinstance(value, dict):
            tables.append((key, value))
        elif isinstance(value, bool):
            lines.append(f"{key} = {'true' if value else 'false'}")
        else:
            lines.append(f"{key} = {value!r}")
    for key, value in tables:
        lines.append("")
        lines.append(f"[geometry.{key}]")
        for k, v in value.items():
            lines.append(f"{k} = {float(v)!r}")
    return "\n".join(lines) + "\n"
