"""CSV emission and import.

Every file has a header row, uses ``.`` as decimal separator and LF line
endings, and is written atomically (temporary file in the target directory,
then rename).
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .nvodmr import ODMRSpectrum

MM = 1e-3


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".12g")


def csv_text(header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    for line in comments:
        buf.write(f"# {line}\n")
    return buf.getvalue()


def write_atomic(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_outputs(out_dir: str | Path, files: dict) -> list[Path]:
    """Write ``{name: text}`` into ``out_dir``; returns the written paths."""
    return [write_atomic(Path(out_dir) / name, text) for name, text in files.items()]


# -- per-artifact tables ----------------------------------------------------

def modes_table(modes) -> str:
    return csv_text(["index", "n", "p", "frequency_ghz"],
                    [(k, m.n_radial, m.p_axial, m.frequency / 1e9) for k, m in enumerate(modes)])


def mode_grid_table(mode) -> str:
    g = mode.grid
    R, Z = np.meshgrid(g.r / MM, g.z / MM, indexing="ij")
    cols = [R.ravel(), Z.ravel(), mode.e_theta.ravel(), mode.h_r.ravel(), mode.h_z.ravel()]
    return csv_text(["r_mm", "z_mm", "e_theta", "h_r", "h_z"], zip(*cols))


def tuning_table(curve) -> str:
    return csv_text(["depth_mm", "frequency_ghz"], [(d / MM, f / 1e9) for d, f in curve])


def plane_table(plane) -> str:
    return csv_text(["r_mm", "h_r", "h_z", "norm_h_r", "norm_h_z"],
                    zip(plane.radii / MM, plane.h_r, plane.h_z,
                        plane.normalized_h_r, plane.normalized_h_z))


def cartesian_table(points, fields) -> str:
    rows = [(p[0] / MM, p[1] / MM, p[2] / MM, h[0], h[1], h[2]) for p, h in zip(points, fields)]
    return csv_text(["x_mm", "y_mm", "z_mm", "hx", "hy", "hz"], rows)


def spectrum_table(spectrum: ODMRSpectrum) -> str:
    return csv_text(["frequency_ghz", "fluorescence"],
                    zip(spectrum.frequencies / 1e9, spectrum.fluorescence))


def scan_table(scan) -> str:
    return csv_text(["position_mm", "contrast"], zip(scan.positions / MM, scan.contrasts))


def candidates_table(cands) -> str:
    res = cands.residuals or [cands.residual] * len(cands.candidates)
    rows = [(c[0], c[1], c[2], r) for c, r in zip(cands.candidates, res)]
    return csv_text(["nx", "ny", "nz", "residual"], rows, comments=[cands.gauge_note])


def read_spectrum_csv(path: str | Path) -> ODMRSpectrum:
    """Import a spectrum written as ``frequency_ghz,fluorescence``."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except FileNotFoundError as exc:
        raise ConfigError(f"spectrum file not found: {path}") from exc
    if not rows or [h.strip() for h in rows[0]] != ["frequency_ghz", "fluorescence"]:
        raise ConfigError(f"{path}: header must be 'frequency_ghz,fluorescence'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or len(data) < 5:
        raise ConfigError(f"{path}: need at least 5 samples")
    try:
        return ODMRSpectrum(data[:, 0] * 1e9, data[:, 1])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
