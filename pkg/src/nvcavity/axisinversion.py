"""Recover an NV major axis from ODMR contrasts below the cavity.

Linear-regime model: contrast is proportional to the squared field component
perpendicular to the spin axis ``n = (u, v, w)``. On the cavity axis the field
is purely axial with relative amplitude ``rho``; at the radius ``r*`` of the
radial-field maximum it is taken as purely radial along the azimuth ``phi``:

    c_center = kappa * rho**2 * (1 - w**2)
    c(phi)   = kappa * (1 - (u cos(phi) + v sin(phi))**2)

Only squared projections enter, so ``n`` and ``-n`` are indistinguishable and
with the two orthogonal azimuths (0, pi/2) the signs of the components are
not observable either: up to four directors fit the data equally well.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.optimize

from .errors import DegenerateRatio, FitNoConvergence, InconsistentMeasurement
from .fieldmap import field_ratio, fields_at, peak_radius, protocol_positions
from .modesolver import ModeSolution
from .nvodmr import NVCenter, _perp_squared, fit_odmr, resonance_lines, synthesize_spectrum

GAUGE_NOTE = ("directors n and -n are equivalent; component signs are not resolved by "
              "orthogonal-azimuth contrasts, so every listed candidate fits equally")
SQUARE_TOL = 1e-9
# Squared components below this are round-off (a few ulp of 1) and set to 0
# before the square root, which would otherwise inflate them to ~1e-8.
SQUARE_ZERO = 1e-14
ZERO_COMPONENT = 1e-9


@dataclass(frozen=True)
class ThreePointMeasurement:
    c_center: float
    c_a: float
    c_b: float
    rho: float
    phi_a: float = 0.0
    phi_b: float = math.pi / 2
    linear_regime: bool = True

    def __post_init__(self):
        if min(self.c_center, self.c_a, self.c_b) < 0:
            raise ValueError("contrasts must be >= 0")
        if not math.isfinite(self.rho):
            raise ValueError("rho must be finite")
        d = (self.phi_b - self.phi_a) % math.pi
        if min(d, math.pi - d) < 1e-12:
            raise ValueError("phi_a and phi_b must differ modulo pi")

    @property
    def azimuths(self) -> tuple[float, float]:
        return self.phi_a, self.phi_b

    @property
    def contrasts(self) -> np.ndarray:
        return np.array([self.c_center, self.c_a, self.c_b])


@dataclass(frozen=True, eq=False)
class AxisCandidateSet:
    candidates: list
    gauge_note: str = GAUGE_NOTE
    residual: float = 0.0
    kappa: float = float("nan")
    residuals: list = field(default_factory=list)

    def __len__(self):
        return len(self.candidates)

    def nearest(self, axis) -> tuple[np.ndarray, float]:
        """Closest candidate to ``axis`` and the angle between them in degrees."""
        errs = [director_angle(c, axis) for c in self.candidates]
        k = int(np.argmin(errs))
        return self.candidates[k], errs[k]


def director_angle(a, b) -> float:
    """Angle in degrees between two lines (sign of either vector ignored)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    # atan2 form stays accurate for nearly parallel lines, unlike acos
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(a, b))), abs(float(a @ b))))


def gauge(n) -> np.ndarray:
    """Representative of the director ``{n, -n}`` in the upper hemisphere.

    Ties on the equator are broken by ``n_x >= 0`` and then ``n_y >= 0``.
    """
    n = np.asarray(n, dtype=float).copy()
    n[np.abs(n) < ZERO_COMPONENT] = 0.0
    for k in (2, 0, 1):
        if n[k] != 0.0:
            return -n if n[k] < 0 else n
    return n


def _dedupe(vectors, tol_deg=1e-6):
    out = []
    for v in vectors:
        if all(director_angle(v, o) > tol_deg for o in out):
            out.append(v)
    return out


def forward_contrasts(axis, rho: float, phi_a: float, phi_b: float, kappa: float):
    """``(c_center, c_a, c_b)`` predicted for spin axis ``axis``."""
    c = model_contrasts(axis, rho, (phi_a, phi_b), kappa)
    return float(c[0]), float(c[1]), float(c[2])


def model_contrasts(axis, rho: float, azimuths: Sequence[float], kappa: float) -> np.ndarray:
    """Center contrast followed by one contrast per circumference azimuth."""
    return kappa * shape_vector(axis, rho, azimuths)


def shape_vector(axis, rho, azimuths) -> np.ndarray:
    u, v, w = np.asarray(axis, dtype=float)
    phi = np.asarray(azimuths, dtype=float)
    circ = 1.0 - (u * np.cos(phi) + v * np.sin(phi)) ** 2
    return np.concatenate([[rho**2 * (1.0 - w**2)], circ])


def invert_axis_closed_form(m: ThreePointMeasurement) -> AxisCandidateSet:
    """Direct solution for the orthogonal-azimuth configuration (0, pi/2)."""
    if abs(m.phi_a) > 1e-12 or abs(m.phi_b - math.pi / 2) > 1e-12:
        raise ValueError("closed form needs phi_a = 0 and phi_b = pi/2")
    if not m.linear_regime:
        raise ValueError("closed form assumes the linear (unsaturated) regime")
    if m.rho == 0:
        raise DegenerateRatio("rho = 0: the center contrast carries no information")
    rho2 = m.rho**2
    kappa = (m.c_center + rho2 * (m.c_a + m.c_b)) / (2 * rho2)
    if not kappa > 0:
        raise InconsistentMeasurement("all contrasts vanish; no axis is implied")
    squares = np.array([1 - m.c_a / kappa, 1 - m.c_b / kappa, 0.0])
    squares[2] = 1 - squares[0] - squares[1]
    if np.any(squares < -SQUARE_TOL) or np.any(squares > 1 + SQUARE_TOL):
        raise InconsistentMeasurement(
            f"implied squared components {squares.tolist()} outside [0, 1]")
    squares[squares < SQUARE_ZERO] = 0.0
    comps = np.sqrt(np.clip(squares, 0.0, 1.0))

    target = m.contrasts
    scale = max(float(np.max(np.abs(target))), 1e-300)
    found = []
    for signs in itertools.product((1.0, -1.0), repeat=3):
        n = comps * signs
        norm = np.linalg.norm(n)
        if norm == 0:
            continue
        n = n / norm
        pred = model_contrasts(n, m.rho, m.azimuths, kappa)
        if np.max(np.abs(pred - target)) <= 1e-6 * scale:
            found.append(gauge(n))
    if not found:
        raise InconsistentMeasurement("no sign combination reproduces the contrasts")
    candidates = _dedupe(found)
    res = [float(np.sum((model_contrasts(c, m.rho, m.azimuths, kappa) - target) ** 2))
           for c in candidates]
    return AxisCandidateSet(candidates, GAUGE_NOTE, max(res), kappa, res)


def _angles_to_axis(theta, psi):
    return np.array([math.sin(theta) * math.cos(psi), math.sin(theta) * math.sin(psi),
                     math.cos(theta)])


def _best_kappa(g, c):
    gg = float(g @ g)
    return max(float(g @ c) / gg, 0.0) if gg > 0 else 0.0


def profile_residual(axis, rho, azimuths, contrasts) -> float:
    """Sum of squared contrast errors with ``kappa`` chosen optimally."""
    g = shape_vector(axis, rho, azimuths)
    c = np.asarray(contrasts, float)
    return float(np.sum((_best_kappa(g, c) * g - c) ** 2))


def invert_axis_least_squares(m: ThreePointMeasurement, extra: Sequence[tuple[float, float]] = (),
                              grid: int = 12, jobs: int = 1) -> AxisCandidateSet:
    """Multi-start least squares over polar angle, azimuth and scale.

    ``extra`` adds ``(phi, contrast)`` points on the same circumference.
    All local minima within 5% of the best residual are returned.
    """
    if m.rho == 0:
        raise DegenerateRatio("rho = 0: the center contrast carries no information")
    azimuths = np.array([m.phi_a, m.phi_b] + [float(p) for p, _ in extra])
    contrasts = np.concatenate([m.contrasts, [float(c) for _, c in extra]])
    wrapped = np.sort(np.mod(azimuths, math.pi))
    gaps = np.diff(np.concatenate([wrapped, [wrapped[0] + math.pi]]))
    if np.any(np.minimum(gaps, math.pi - gaps) < 1e-12):
        raise ValueError("azimuths must be pairwise distinct modulo pi")
    rho = m.rho
    scale = max(float(np.max(contrasts)), 1e-300)

    def residuals(p):
        return model_contrasts(_angles_to_axis(p[0], p[1]), rho, azimuths, p[2]) - contrasts

    def jac(p):
        th, ps, ka = p
        n = _angles_to_axis(th, ps)
        dn_dth = np.array([math.cos(th) * math.cos(ps), math.cos(th) * math.sin(ps), -math.sin(th)])
        dn_dps = np.array([-math.sin(th) * math.sin(ps), math.sin(th) * math.cos(ps), 0.0])
        proj = n[0] * np.cos(azimuths) + n[1] * np.sin(azimuths)
        J = np.empty((contrasts.size, 3))
        for col, dn in ((0, dn_dth), (1, dn_dps)):
            dproj = dn[0] * np.cos(azimuths) + dn[1] * np.sin(azimuths)
            J[0, col] = -ka * rho**2 * 2 * n[2] * dn[2]
            J[1:, col] = -ka * 2 * proj * dproj
        J[:, 2] = shape_vector(n, rho, azimuths)
        return J

    thetas = (np.arange(grid) + 0.5) * math.pi / grid
    psis = (np.arange(grid) + 0.5) * 2 * math.pi / grid
    starts = [(t, p) for t in thetas for p in psis]

    def local(start):
        th, ps = start
        k0 = _best_kappa(shape_vector(_angles_to_axis(th, ps), rho, azimuths), contrasts)
        k0 = k0 if k0 > 0 else scale
        try:
            r = scipy.optimize.least_squares(residuals, [th, ps, k0], jac=jac, method="lm",
                                             xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        except (ValueError, np.linalg.LinAlgError):
            return None
        return float(2 * r.cost), r.x

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(local, starts))
    else:
        results = [local(s) for s in starts]
    results = [(k, r) for k, r in enumerate(results) if r is not None and r[1][2] > 0]
    if not results:
        raise FitNoConvergence("no multi-start run converged to a positive scale")
    # deterministic reduction: lowest residual, ties by start index
    results.sort(key=lambda kr: (kr[1][0], kr[0]))
    best = results[0][1][0]
    cutoff = 1.05 * best + 1e-20 * scale**2 * contrasts.size
    kept = [(res, x) for _, (res, x) in results if res <= cutoff]
    vectors = _dedupe([gauge(_angles_to_axis(x[0], x[1])) for _, x in kept])
    res_of = []
    for v in vectors:
        res_of.append(min(res for res, x in kept
                          if director_angle(gauge(_angles_to_axis(x[0], x[1])), v) <= 1e-6))
    kappa = float(kept[0][1][2])
    return AxisCandidateSet(vectors, GAUGE_NOTE, best, kappa, res_of)


def brute_force_best(m: ThreePointMeasurement, extra=(), step_deg: float = 1.0):
    """Exhaustive search over the upper hemisphere on a ``step_deg`` grid.

    Returns ``(residual, axis)`` for the best grid point.
    """
    azimuths = np.array([m.phi_a, m.phi_b] + [float(p) for p, _ in extra])
    contrasts = np.concatenate([m.contrasts, [float(c) for _, c in extra]])
    th = np.radians(np.arange(0.0, 90.0 + 1e-9, step_deg))
    ps = np.radians(np.arange(0.0, 360.0, step_deg))
    T, P = np.meshgrid(th, ps, indexing="ij")
    n = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    proj = n[..., 0, None] * np.cos(azimuths) + n[..., 1, None] * np.sin(azimuths)
    g = np.concatenate([(m.rho**2 * (1 - n[..., 2] ** 2))[..., None], 1 - proj**2], axis=-1)
    kappa = np.clip(np.einsum("...k,k->...", g, contrasts) / np.einsum("...k,...k->...", g, g),
                    0.0, None)
    res = np.sum((kappa[..., None] * g - contrasts) ** 2, axis=-1)
    k = np.unravel_index(np.argmin(res), res.shape)
    return float(res[k]), n[k]


# ---------------------------------------------------------------------------
# full protocol on simulated fields

@dataclass(frozen=True, eq=False)
class AxisRecovery:
    true_axis: np.ndarray
    candidates: AxisCandidateSet
    angular_errors: list
    measurement: ThreePointMeasurement
    r_star: float
    max_saturation: float

    @property
    def nearest_error(self) -> float:
        return min(self.angular_errors)


def end_to_end_axis_recovery(mode: ModeSolution, nv: NVCenter, z_offset: float,
                             drive_power: float, azimuths=(0.0, math.pi / 2),
                             points: int = 201, half_span_linewidths: float = 8.0,
                             noise_sigma: float = 0.0, seed: int = 0) -> AxisRecovery:
    """Run the three-point protocol against the solved cavity field.

    Spectra are synthesized with the true local field vectors at the cavity
    center and at ``r*`` along the two azimuths, their contrasts are fitted,
    ``rho`` comes from the mode, and the idealized closed form inverts them.
    """
    r_star = peak_radius(mode, z_offset)
    positions = protocol_positions(r_star, z_offset, azimuths)
    fields = fields_at(mode, positions)
    s = drive_power * _perp_squared(fields, nv.axis) / nv.p_sat
    if s.max() > 0.01:
        raise ValueError(f"drive power leaves the linear regime (s = {s.max():.3g} > 0.01)")
    lines = [c for c, _ in resonance_lines(nv)]
    if len(lines) > 3:
        raise ValueError("spectra with more than three resolved lines are not fitted")
    half = half_span_linewidths * nv.linewidth_fwhm
    freqs = np.linspace(min(lines) - half, max(lines) + half, points)
    contrasts = []
    for k, h in enumerate(fields):
        sp = synthesize_spectrum(nv, h, drive_power, freqs, noise_sigma, seed + k)
        contrasts.append(fit_odmr(sp, len(lines)).contrast)
    rho = field_ratio(mode, z_offset)
    meas = ThreePointMeasurement(contrasts[0], contrasts[1], contrasts[2], rho,
                                 azimuths[0], azimuths[1], True)
    cands = invert_axis_closed_form(meas)
    errs = [director_angle(c, nv.axis) for c in cands.candidates]
    return AxisRecovery(np.asarray(nv.axis), cands, errs, meas, r_star, float(s.max()))
