"""NV- ground-state response to the cavity microwave field.

Contrast model: the spin is driven by the field component perpendicular to
its major axis, the saturation parameter is ``s = P |H_perp|^2 / p_sat`` (with
``|H_perp| = 1`` as the reference coupling) and the fluorescence dip depth is
``contrast_ceiling * s / (1 + s)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.optimize
import scipy.signal

from .errors import FitNoConvergence, InsufficientSpan
from .fieldmap import fields_at
from .modesolver import ModeSolution


def dbm_to_watt(dbm: float) -> float:
    return 1e-3 * 10 ** (dbm / 10)


def watt_to_dbm(watt: float) -> float:
    return 10 * math.log10(watt / 1e-3)


_POWER = re.compile(r"^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(dBm|mW|W)\s*$")


def parse_power(text) -> float:
    """``"5dBm"``, ``"3.2mW"`` or ``"0.01W"`` to watts. Plain numbers are watts."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    m = _POWER.match(str(text))
    if not m:
        raise ValueError(f"cannot parse power {text!r}; expected e.g. '5dBm' or '0.01W'")
    value, unit = float(m.group(1)), m.group(2)
    if unit == "dBm":
        return dbm_to_watt(value)
    return value * (1e-3 if unit == "mW" else 1.0)


DEFAULT_P_SAT = dbm_to_watt(5.0)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero vector has no direction")
    return v / n


@dataclass(frozen=True)
class NVCenter:
    """Single NV- spin.

    The linewidth is not measured for the cavity experiment, so its default
    (10 MHz) is a placeholder typical of nanodiamond ODMR.
    """

    axis: tuple = (0.0, 0.0, 1.0)
    d_splitting: float = 2.870e9
    strain_e: float = 0.0
    hyperfine_a: float = 0.0
    linewidth_fwhm: float = 10e6
    contrast_ceiling: float = 0.12
    p_sat: float = DEFAULT_P_SAT

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValueError(f"axis must be a unit 3-vector, got {self.axis}")
        object.__setattr__(self, "axis", tuple(float(x) for x in a))
        if not (self.d_splitting > 0 and self.linewidth_fwhm > 0 and self.p_sat > 0):
            raise ValueError("d_splitting, linewidth_fwhm and p_sat must be positive")
        if not 0 < self.contrast_ceiling <= 1:
            raise ValueError("contrast_ceiling must be in (0, 1]")
        if self.strain_e < 0 or self.hyperfine_a < 0:
            raise ValueError("strain_e and hyperfine_a must be >= 0")

    @classmethod
    def with_axis(cls, direction, **kwargs) -> "NVCenter":
        return cls(axis=tuple(unit(direction)), **kwargs)


def rabi_coupling(field, axis) -> float:
    """Magnitude of the field component perpendicular to ``axis``."""
    h = np.asarray(field, dtype=float)
    n = np.asarray(axis, dtype=float)
    return float(np.linalg.norm(h - np.dot(h, n) * n))


def _perp_squared(fields: np.ndarray, axis) -> np.ndarray:
    n = np.asarray(axis, dtype=float)
    par = fields @ n
    return np.maximum(np.einsum("ij,ij->i", fields, fields) - par**2, 0.0)


def resonance_lines(nv: NVCenter) -> list[tuple[float, float]]:
    """Zero-field transition frequencies and their relative weights.

    Coincident lines are merged, so the unstrained, hyperfine-free case gives
    one line of weight 1.
    """
    lines: dict[float, float] = {}
    offsets = (-nv.hyperfine_a, 0.0, nv.hyperfine_a) if nv.hyperfine_a > 0 else (0.0,)
    for sign in (-1.0, 1.0):
        for off in offsets:
            f = nv.d_splitting + sign * nv.strain_e + off
            lines[f] = lines.get(f, 0.0) + 0.5 / len(offsets)
    return sorted(lines.items())


def saturation_contrast(nv: NVCenter, local_power: float) -> float:
    if local_power < 0:
        raise ValueError("local_power must be >= 0")
    s = local_power / nv.p_sat
    return nv.contrast_ceiling * s / (1.0 + s)


def lorentzian(f, center, fwhm):
    """Unit-peak Lorentzian."""
    hw2 = (0.5 * fwhm) ** 2
    return hw2 / ((np.asarray(f) - center) ** 2 + hw2)


@dataclass(frozen=True, eq=False)
class ODMRSpectrum:
    frequencies: np.ndarray
    fluorescence: np.ndarray
    drive_power: float = float("nan")
    field: tuple | None = None
    nv: NVCenter | None = None
    contrast: float = float("nan")

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        if f.ndim != 1 or f.size < 2 or np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "fluorescence", np.asarray(self.fluorescence, dtype=float))


def synthesize_spectrum(nv: NVCenter, field, drive_power: float, frequencies: Sequence[float],
                        noise_sigma: float = 0.0, seed: int = 0) -> ODMRSpectrum:
    """Normalized fluorescence versus drive frequency, with seeded Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    f = np.asarray(frequencies, dtype=float)
    local = drive_power * rabi_coupling(field, nv.axis) ** 2
    C = saturation_contrast(nv, local)
    dip = np.zeros_like(f)
    for center, weight in resonance_lines(nv):
        dip += weight * lorentzian(f, center, nv.linewidth_fwhm)
    fl = 1.0 - C * dip
    if noise_sigma > 0:
        fl = fl + np.random.default_rng(seed).normal(0.0, noise_sigma, f.size)
    return ODMRSpectrum(f, fl, drive_power, tuple(np.asarray(field, float)), nv, C)


# ---------------------------------------------------------------------------
# fitting

@dataclass(frozen=True)
class ODMRFit:
    centers: tuple
    fwhm: float
    contrast: float
    baseline: float
    residual_rms: float
    iterations: int
    low_significance: bool = False
    stderr: dict = field(default_factory=dict)


def _smooth5(y):
    k = np.ones(5) / 5
    pad = np.pad(y, 2, mode="edge")
    return np.convolve(pad, k, mode="valid")


def _initial_guess(f, y, n_lines):
    baseline = float(np.median(y))
    ys = _smooth5(y)
    minima, _ = scipy.signal.find_peaks(-ys)
    if minima.size == 0:
        minima = np.array([int(np.argmin(ys))])
    minima = minima[np.argsort(ys[minima])][:n_lines]
    deepest = int(minima[0])
    depth = baseline - ys[deepest]
    half = baseline - 0.5 * depth
    left = deepest
    while left > 0 and ys[left] < half:
        left -= 1
    right = deepest
    while right < len(ys) - 1 and ys[right] < half:
        right += 1
    if depth <= 0 or ys[left] < half or ys[right] < half:
        return baseline, depth, None, None
    fwhm = float(f[right] - f[left])
    centers = sorted(float(f[i]) for i in minima)
    while len(centers) < n_lines:
        centers.append(centers[-1] + 0.5 * fwhm)
        centers.sort()
    return baseline, depth, fwhm, centers


def _model(p, f, n):
    baseline, C, fwhm = p[0], p[1], p[2]
    dip = sum(lorentzian(f, c, fwhm) for c in p[3:3 + n]) / n
    return baseline * (1.0 - C * dip)


def _jacobian(p, f, n):
    baseline, C, fwhm = p[0], p[1], p[2]
    hw = 0.5 * fwhm
    J = np.empty((f.size, 3 + n))
    dip = np.zeros_like(f)
    dfw = np.zeros_like(f)
    for k, c in enumerate(p[3:3 + n]):
        d = f - c
        den = d**2 + hw**2
        L = hw**2 / den
        dip += L / n
        dfw += (hw * d**2 / den**2) / n
        J[:, 3 + k] = -baseline * C * (2 * hw**2 * d / den**2) / n
    J[:, 0] = 1.0 - C * dip
    J[:, 1] = -baseline * dip
    J[:, 2] = -baseline * C * dfw
    return J


def fit_odmr(spectrum: ODMRSpectrum, n_lines: int = 1, max_iter: int = 200) -> ODMRFit:
    """Least-squares fit of ``n_lines`` equal-weight Lorentzian dips.

    The dips share one linewidth; ``contrast`` is their summed depth relative
    to the baseline, matching the synthesis convention. Initial values come
    from the median level, the deepest minima of a 5-point running mean and
    the half-depth crossings around the deepest one.
    """
    if n_lines not in (1, 2, 3):
        raise ValueError("n_lines must be 1, 2 or 3")
    f = spectrum.frequencies
    y = spectrum.fluorescence
    baseline, depth, fwhm, centers = _initial_guess(f, y, n_lines)
    if depth <= 3 * _noise_estimate(y):
        # no dip distinguishable from the noise
        resid0 = float(np.sqrt(np.mean((y - baseline) ** 2)))
        return ODMRFit(tuple([float(f[np.argmin(y)])] * n_lines), float("nan"), 0.0,
                       baseline, resid0, 0, True)
    if fwhm is None:
        raise InsufficientSpan("half-depth crossing not found on both sides of the dip")
    span = f[-1] - f[0]
    if span < 3 * fwhm:
        raise InsufficientSpan(f"span {span:.4g} Hz < 3 x linewidth estimate {fwhm:.4g} Hz")

    step = float(np.min(np.diff(f)))
    x0 = np.array([baseline, n_lines * depth / baseline, fwhm] + centers)
    lo = np.array([0.0, 0.0, step] + [f[0]] * n_lines)
    hi = np.array([np.inf, np.inf, span] + [f[-1]] * n_lines)
    x0 = np.clip(x0, lo + 1e-12 * np.abs(lo), hi)
    scale = np.array([1.0, max(x0[1], 1e-3), fwhm] + [fwhm] * n_lines)
    try:
        res = scipy.optimize.least_squares(
            lambda p: _model(p, f, n_lines) - y, x0, jac=lambda p: _jacobian(p, f, n_lines),
            bounds=(lo, hi), method="trf", x_scale=scale, ftol=1e-10, xtol=1e-12,
            gtol=1e-12, max_nfev=max_iter)
    except ValueError as exc:
        raise FitNoConvergence(str(exc)) from exc
    if res.status == 0:
        raise FitNoConvergence(f"no convergence after {res.nfev} evaluations")
    p = res.x
    rms = float(np.sqrt(np.mean(res.fun**2)))
    stderr = _stderr(res, f.size)
    significant = p[1] > 3 * stderr.get("contrast", np.inf)
    return ODMRFit(tuple(sorted(float(c) for c in p[3:])), float(p[2]), float(p[1]),
                   float(p[0]), rms, int(res.nfev), not significant, stderr)


def _noise_estimate(y):
    return float(np.std(np.diff(y)) / math.sqrt(2))


def _stderr(res, npts):
    J = res.jac
    dof = max(npts - J.shape[1], 1)
    s2 = 2 * res.cost / dof
    try:
        cov = np.linalg.pinv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        return {}
    d = np.sqrt(np.clip(np.diag(cov), 0, None))
    return {"baseline": float(d[0]), "contrast": float(d[1]), "fwhm": float(d[2])}


# ---------------------------------------------------------------------------
# spatial scans

@dataclass(frozen=True, eq=False)
class ContrastScan:
    positions: np.ndarray
    contrasts: np.ndarray
    normalized: bool
    axis_name: str = "x"


def contrast_scan(mode: ModeSolution, nv: NVCenter, path, drive_power: float,
                  normalize: bool = True, axis_name: str = "x") -> ContrastScan:
    """Steady-state ODMR contrast at each point of ``path``.

    ``path`` is an ``(N, 3)`` sequence of ``(x, y, z_offset)``; the reported
    position is the coordinate named by ``axis_name``.
    """
    pts = np.atleast_2d(np.asarray(path, dtype=float))
    h = fields_at(mode, pts)
    s = drive_power * _perp_squared(h, nv.axis) / nv.p_sat
    contrasts = nv.contrast_ceiling * s / (1.0 + s)
    col = "xyz".index(axis_name)
    did_normalize = False
    if normalize and contrasts.max() > 0:
        contrasts = contrasts / contrasts.max()
        did_normalize = True
    return ContrastScan(pts[:, col].copy(), contrasts, did_normalize, axis_name)


def saturation_parameter(mode: ModeSolution, nv: NVCenter, path, drive_power: float) -> np.ndarray:
    h = fields_at(mode, np.atleast_2d(np.asarray(path, dtype=float)))
    return drive_power * _perp_squared(h, nv.axis) / nv.p_sat


def line_path(start: float, stop: float, step: float, z_offset: float, axis_name: str = "x"):
    """Points from ``start`` to ``stop`` (inclusive) along one lateral axis."""
    n = int(round((stop - start) / step)) + 1
    coords = start + step * np.arange(n)
    pts = np.zeros((n, 3))
    pts[:, "xy".index(axis_name)] = coords
    pts[:, 2] = z_offset
    return pts


def drive_for_saturation(mode: ModeSolution, nv: NVCenter, path, s_max: float) -> float:
    """Drive power at which the strongest point of ``path`` has saturation ``s_max``.

    Mode fields carry an arbitrary normalization, so absolute drive powers are
    only meaningful relative to this scale.
    """
    peak = float(np.max(saturation_parameter(mode, nv, path, 1.0)))
    if peak == 0:
        raise ValueError("NV does not couple to the field anywhere on the path")
    return s_max / peak
