"""Command-line entry point: ``nvcavity <subcommand> --config run.toml``.

Each subcommand builds all its CSV tables in memory and only then writes
them, one atomic rename per file, so a failing run leaves no partial output.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 infeasible measurement or target.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from . import io
from .axisinversion import ThreePointMeasurement, invert_axis_closed_form, invert_axis_least_squares
from .config import GHZ, MM, ConfigError
from .errors import (InconsistentMeasurement, InsufficientSpan, NVCavityError,
                     OffsetOutsideDomain, ResolutionTooCoarse, TargetOutOfRange)
from .fieldmap import field_ratio, fields_at, sample_plane
from .modesolver import (calibrate_geometry, find_plunger_for_frequency, select_mode,
                         solve_te0_modes, track_mode)
from .nvodmr import (ODMRSpectrum, _model, _perp_squared, contrast_scan, dbm_to_watt,
                     drive_for_saturation, fit_odmr, line_path, resonance_lines,
                     saturation_contrast, synthesize_spectrum, watt_to_dbm)

log = logging.getLogger("nvcavity")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4
_CONFIG_ERRORS = (ConfigError, OffsetOutsideDomain, ResolutionTooCoarse, ValueError)
_INFEASIBLE = (InconsistentMeasurement, InsufficientSpan, TargetOutOfRange)


def _mode_for(run: cfg.RunConfig, selector):
    modes = solve_te0_modes(run.geometry, run.solver.resolution, run.solver.count, run.solver.window)
    mode = select_mode(modes, selector)
    if mode is None:
        raise ConfigError(f"no mode {tuple(selector)} in the solver window; "
                          f"found {[m.indices for m in modes]}")
    return mode


# -- subcommands ------------------------------------------------------------

def cmd_modes(run: cfg.RunConfig, args) -> dict:
    run.require("geometry")
    modes = solve_te0_modes(run.geometry, run.solver.resolution, run.solver.count, run.solver.window)
    files = {"modes.csv": io.modes_table(modes)}
    for k, m in enumerate(modes):
        files[f"mode_{k}_n{m.n_radial}_p{m.p_axial}.csv"] = io.mode_grid_table(m)
        print(f"mode {k}: TE0,{m.n_radial},{m.p_axial}  {m.frequency / GHZ:.6f} GHz")
    return files


def cmd_tune(run: cfg.RunConfig, args) -> dict:
    run.require("geometry", "tune")
    s = run.section("tune")
    selector = cfg.mode_selector(s)
    g = run.geometry
    if "depths_mm" in s:
        depths = np.array(cfg.number_list(s, "depths_mm")) * MM
        if depths.size == 0 or np.any(depths < 0) or np.any(depths > g.max_plunger_depth * (1 + 1e-9)):
            raise ConfigError(f"tune.depths_mm must lie in [0, {g.max_plunger_depth / MM:g}] mm")
    else:
        depths = np.linspace(0.0, g.max_plunger_depth, cfg.integer(s, "steps", 15, minimum=2))
    count = max(run.solver.count, 8)
    points = track_mode(g, depths, selector, run.solver.resolution, count, run.solver.window,
                        jobs=args.jobs)
    files = {"tuning.csv": io.tuning_table([(p.depth, p.frequency) for p in points])}
    for p in points:
        print(f"depth {p.depth / MM:7.3f} mm  {p.frequency / GHZ:.6f} GHz")
    if "target_ghz" in s:
        target = cfg.positive(s, "target_ghz") * GHZ
        depth = find_plunger_for_frequency(g, target, selector, run.solver.resolution,
                                           count=count, window=run.solver.window)
        files["tune_target.csv"] = io.csv_text(["target_ghz", "depth_mm"], [(target / GHZ, depth / MM)])
        print(f"target {target / GHZ:.4f} GHz reached at depth {depth / MM:.4f} mm")
    return files


def cmd_fieldmap(run: cfg.RunConfig, args) -> dict:
    run.require("geometry")
    s = run.section("fieldmap")
    mode = _mode_for(run, cfg.mode_selector(s))
    offsets = cfg.number_list(s, "offsets_mm", default=[1.0])
    radii = None
    if "radius_step_mm" in s:
        step = cfg.positive(s, "radius_step_mm") * MM
        R = run.geometry.shield_radius
        radii = np.linspace(0.0, R, int(round(R / step)) + 1)
    files = {}
    for off in offsets:
        plane = sample_plane(mode, off * MM, radii)
        files[f"plane_{off:g}mm.csv"] = io.plane_table(plane)
        print(f"offset {off:g} mm: |h_r| peaks at r = {plane.peak_h_r_radius / MM:.3f} mm")
    if "cartesian_points_mm" in s:
        pts = s["cartesian_points_mm"]
        if not isinstance(pts, list) or not pts:
            raise ConfigError("fieldmap.cartesian_points_mm must be a list of [x, y, z_offset]")
        arr = np.array([cfg.number_list({"p": p}, "p", length=3) for p in pts]) * MM
        files["cartesian.csv"] = io.cartesian_table(arr, fields_at(mode, arr))
    return files


def _odmr_field(run: cfg.RunConfig, s: dict) -> np.ndarray:
    if ("field" in s) == ("position_mm" in s):
        raise ConfigError("odmr needs exactly one of field or position_mm")
    if "field" in s:
        return np.array(cfg.number_list(s, "field", length=3))
    run.require("geometry")
    pos = np.array(cfg.number_list(s, "position_mm", length=3)) * MM
    mode = _mode_for(run, cfg.mode_selector(s))
    return fields_at(mode, pos[None, :])[0]


def _drive(s: dict, nv, coupling_sq: float, default_saturation=None) -> float:
    """Drive power from ``drive_power`` or from a target saturation parameter."""
    if "drive_power" in s and "saturation" in s:
        raise ConfigError("give drive_power or saturation, not both")
    if "drive_power" in s:
        return cfg.power(s, "drive_power")
    if "saturation" not in s and default_saturation is None:
        raise ConfigError("missing drive_power or saturation")
    sat = cfg.number(s, "saturation", default_saturation)
    if sat < 0:
        raise ConfigError("saturation must be >= 0")
    if coupling_sq == 0:
        return 0.0 if sat == 0 else math.inf
    return sat * nv.p_sat / coupling_sq


def cmd_odmr(run: cfg.RunConfig, args) -> dict:
    run.require("odmr")
    s = run.section("odmr")
    nv = run.nv
    n_lines = cfg.integer(s, "n_lines", len(resonance_lines(nv)), minimum=1)
    files = {}
    if "input_csv" in s:
        spectrum = io.read_spectrum_csv(cfg.string(s, "input_csv"))
    else:
        h = _odmr_field(run, s)
        coupling_sq = float(_perp_squared(h[None, :], nv.axis)[0])
        drive = _drive(s, nv, coupling_sq)
        if not math.isfinite(drive):
            raise ConfigError("the NV axis is parallel to the field; no saturation is reachable")
        lines = [c for c, _ in resonance_lines(nv)]
        half = 8 * nv.linewidth_fwhm
        start = cfg.number(s, "start_ghz", (min(lines) - half) / GHZ) * GHZ
        stop = cfg.number(s, "stop_ghz", (max(lines) + half) / GHZ) * GHZ
        points = cfg.integer(s, "points", 201, minimum=5)
        if not stop > start:
            raise ConfigError("odmr.stop_ghz must exceed start_ghz")
        spectrum = synthesize_spectrum(nv, h, drive, np.linspace(start, stop, points),
                                       cfg.number(s, "noise_sigma", 0.0), args.seed)
        files["spectrum.csv"] = io.spectrum_table(spectrum)
        if "saturation_powers_dbm" in s:
            powers = cfg.number_list(s, "saturation_powers_dbm")
            # power at the NV in reference-coupling units, so p_sat sits at 5 dBm
            rows = [(p, saturation_contrast(nv, dbm_to_watt(p))) for p in powers]
            files["saturation.csv"] = io.csv_text(["local_power_dbm", "contrast"], rows)
        if drive > 0:
            print(f"drive {watt_to_dbm(drive):.3f} dBm, true contrast {spectrum.contrast:.6g}")
    fit = fit_odmr(spectrum, min(n_lines, 3))
    rows = [("contrast", fit.contrast), ("fwhm_mhz", fit.fwhm / 1e6), ("baseline", fit.baseline),
            ("residual_rms", fit.residual_rms), ("low_significance", int(fit.low_significance))]
    rows += [(f"center_{k}_ghz", c / GHZ) for k, c in enumerate(fit.centers)]
    files["fit.csv"] = io.csv_text(["parameter", "value"], rows)
    if not fit.low_significance:
        p = np.array([fit.baseline, fit.contrast, fit.fwhm] + list(fit.centers))
        model = ODMRSpectrum(spectrum.frequencies, _model(p, spectrum.frequencies, len(fit.centers)))
        files["spectrum_fit.csv"] = io.spectrum_table(model)
    print(f"fitted contrast {fit.contrast:.6g}, fwhm {fit.fwhm / 1e6:.4g} MHz"
          + ("  (not significant)" if fit.low_significance else ""))
    return files


def cmd_scan(run: cfg.RunConfig, args) -> dict:
    run.require("geometry", "scan")
    s = run.section("scan")
    mode = _mode_for(run, cfg.mode_selector(s))
    axis_name = cfg.string(s, "axis", "x", choices=("x", "y"))
    step = cfg.positive(s, "step_mm", 1.0)
    path = line_path(cfg.number(s, "start_mm", -12.0) * MM, cfg.number(s, "stop_mm", 12.0) * MM,
                     step * MM, cfg.number(s, "z_offset_mm", 1.0) * MM, axis_name)
    nv = run.nv
    if "drive_power" in s:
        drive = _drive(s, nv, 1.0)
    else:
        sat = cfg.number(s, "saturation", 0.01)
        try:
            drive = drive_for_saturation(mode, nv, path, sat)
        except ValueError:
            drive = 0.0
    scan = contrast_scan(mode, nv, path, drive, cfg.boolean(s, "normalize", True), axis_name)
    k = int(np.argmax(scan.contrasts))
    print(f"peak contrast {scan.contrasts[k]:.4g} at {axis_name} = {scan.positions[k] / MM:g} mm")
    return {"scan.csv": io.scan_table(scan)}


def cmd_invert_axis(run: cfg.RunConfig, args) -> dict:
    run.require("invert")
    s = run.section("invert")
    if "rho" in s:
        rho = cfg.number(s, "rho")
    else:
        run.require("geometry")
        mode = _mode_for(run, cfg.mode_selector(s))
        rho = field_ratio(mode, cfg.number(s, "z_offset_mm", 1.0) * MM)
        print(f"rho from mode: {rho:.6g}")
    m = ThreePointMeasurement(cfg.number(s, "c_center"), cfg.number(s, "c_a"), cfg.number(s, "c_b"),
                              rho, math.radians(cfg.number(s, "phi_a_deg", 0.0)),
                              math.radians(cfg.number(s, "phi_b_deg", 90.0)))
    method = cfg.string(s, "method", "closed", choices=("closed", "least_squares"))
    extra = []
    for item in s.get("extra", []):
        phi, c = cfg.number_list({"e": item}, "e", length=2)
        extra.append((math.radians(phi), c))
    if extra and method == "closed":
        raise ConfigError("invert.extra requires method = 'least_squares'")
    if method == "closed":
        cands = invert_axis_closed_form(m)
    else:
        cands = invert_axis_least_squares(m, extra, jobs=args.jobs)
    for c in cands.candidates:
        print("candidate n = (%.6f, %.6f, %.6f)" % tuple(c))
    return {"candidates.csv": io.candidates_table(cands)}


def cmd_calibrate(run: cfg.RunConfig, args) -> dict:
    run.require("geometry", "calibrate")
    s = run.section("calibrate")
    raw = s.get("targets")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("calibrate.targets must be a non-empty list of {n, p, frequency_ghz}")
    targets = []
    for t in raw:
        if not isinstance(t, dict) or set(t) != {"n", "p", "frequency_ghz"}:
            raise ConfigError("each calibrate target needs exactly n, p and frequency_ghz")
        sel = (cfg.integer(t, "n", minimum=1), cfg.integer(t, "p", minimum=1))
        targets.append((sel, cfg.positive(t, "frequency_ghz") * GHZ))
    free = s.get("free", ["relative_permittivity"])
    if not isinstance(free, list) or not all(isinstance(x, str) for x in free):
        raise ConfigError("calibrate.free must be a list of parameter names")
    result = calibrate_geometry(run.geometry, targets, free, run.solver.resolution,
                                max_sweeps=cfg.integer(s, "max_sweeps", 50, minimum=1))
    rows = [(sel[0], sel[1], f / GHZ, result.frequencies[sel] / GHZ, result.residuals[sel])
            for sel, f in targets]
    for n, p, ft, fs, r in rows:
        print(f"TE0,{n},{p}: target {ft:.4f} GHz, simulated {fs:.6f} GHz, residual {r:+.3%}")
    return {"calibration.csv": io.csv_text(["n", "p", "target_ghz", "frequency_ghz", "residual"], rows),
            "calibrated_geometry.toml": cfg.geometry_toml(result.geometry)}


COMMANDS = {
    "modes": (cmd_modes, "solve the TE0np modes of the configured cavity",
              ["geometry", "solver"]),
    "tune": (cmd_tune, "track one mode across plunger depths", ["geometry", "solver", "tune"]),
    "fieldmap": (cmd_fieldmap, "sample h_r and h_z on planes below the cavity",
                 ["geometry", "solver", "fieldmap"]),
    "odmr": (cmd_odmr, "synthesize and fit an ODMR spectrum", ["odmr", "nv", "geometry", "solver"]),
    "scan": (cmd_scan, "ODMR contrast along a line below the cavity",
             ["geometry", "solver", "nv", "scan"]),
    "invert-axis": (cmd_invert_axis, "NV axis candidates from three contrasts",
                    ["invert", "geometry", "solver"]),
    "calibrate": (cmd_calibrate, "fit geometry parameters to target frequencies",
                  ["geometry", "solver", "calibrate"]),
}


def _epilog(sections) -> str:
    lines = ["config keys read (lengths in mm, frequencies in GHz):", "  out"]
    for sec in sections:
        for key, desc in cfg.SECTION_KEYS[sec].items():
            lines.append(f"  {sec + '.' + key:<32} {desc}")
    return "\n".join(lines)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


GLOBAL_DEFAULTS = {"config": None, "out": None, "seed": 0, "jobs": 1, "verbose": False}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (default: config 'out' or '.')")
    common.add_argument("--seed", type=_u64, help="noise seed (default 0)")
    common.add_argument("--jobs", type=_positive_int, help="worker cap (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="nvcavity", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, sections) in COMMANDS.items():
        sub.add_parser(name, help=help_text, description=help_text, parents=[common],
                       epilog=_epilog(sections), formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        run = cfg.load_config(args.config)
        files = func(run, args)
        out = Path(args.out or run.out or ".")
        for path in io.write_outputs(out, files):
            log.info("wrote %s", path)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _INFEASIBLE as exc:
        print(f"infeasible: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NVCavityError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
