"""Finite-difference TE0 eigenmodes of the axisymmetric cavity.

For pure TE modes without azimuthal variation only ``E_theta``, ``H_r`` and
``H_z`` survive, and ``E_theta`` obeys the scalar equation

    d/dr[(1/r) d(r E)/dr] + d^2E/dz^2 + eps_r(r, z) k^2 E = 0,   k = omega / c

with ``E = 0`` on metal, on the symmetry axis and on the outer boundary of the
modeled region. Multiplying by ``r`` and discretizing in flux form gives a
symmetric pencil ``S x = k^2 M x`` with ``M = diag(eps_r * r)``; the solver works
with that pencil directly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.constants import c as C0
from scipy.special import jn_zeros

from .errors import (CalibrationNoConvergence, ClassificationAmbiguous, ModeTrackingLost,
                     SolverNoConvergence, TargetOutOfRange)
from .geometry import CavityGeometry, Grid2D, rasterize

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 0.25e-3
DEFAULT_WINDOW = (1e9, 4e9)
DENSE_LIMIT = 20_000

# Frequencies the measured cavity shows for its fundamental and for the mode
# used to drive the NV spin.
FUNDAMENTAL_TARGET = ((1, 1), 2.2e9)
NV_MODE_TARGET = ((1, 3), 2.7e9)
NV_MODE = (1, 3)
ZERO_FIELD_SPLITTING = 2.87e9


def k_of(frequency):
    return 2 * math.pi * frequency / C0


def f_of(k_squared):
    return C0 * np.sqrt(k_squared) / (2 * math.pi)


@dataclass(frozen=True, eq=False)
class EigenProblem:
    """Discretized pencil on the full node grid and on the free nodes.

    ``A`` and ``B`` are the full-grid operator and weight (``A x = k^2 B x``):
    Dirichlet rows of ``A`` hold a single unit diagonal and the matching
    entries of ``B`` are zero, which sends those rows to infinity instead of
    producing spurious eigenvalues. ``S`` and ``M`` are the reduced symmetric
    stiffness and diagonal mass on the free nodes, ``S = diag(r) A``.
    """

    grid: Grid2D
    A: sp.csr_matrix
    B: np.ndarray
    S: sp.csr_matrix
    M: np.ndarray
    free: np.ndarray

    @property
    def size(self) -> int:
        return self.S.shape[0]

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Scatter a free-node vector onto the ``(nr, nz)`` grid."""
        out = np.zeros((self.grid.nr, self.grid.nz))
        out[self.free] = x
        return out


def assemble_eigenproblem(grid: Grid2D) -> EigenProblem:
    nr, nz, dr, dz = grid.nr, grid.nz, grid.dr, grid.dz
    free = ~grid.dirichlet
    n_free = int(free.sum())
    index = np.full((nr, nz), -1, dtype=np.int64)
    index[free] = np.arange(n_free)
    I, J = np.nonzero(free)
    row = index[I, J]
    r = I * dr
    r_out = (I + 0.5) * dr
    r_in = (I - 0.5) * dr

    # Sub-cell plunger face: the flux toward the metal uses the true gap.
    gap = grid.gap_above[I, J]
    cut = gap < dz * (1 + 1e-9)
    up = np.where(cut, r / (np.where(cut, gap, dz) * dz), r / dz**2)

    diag = r_out / dr**2 + r_in / dr**2 + 1.0 / r + r / dz**2 + up
    rows, cols, vals = [row], [row], [diag]
    for di, dj, coef in ((1, 0, -r_out / dr**2), (-1, 0, -r_in / dr**2),
                         (0, 1, -r / dz**2), (0, -1, -r / dz**2)):
        nb = index[I + di, J + dj]
        keep = nb >= 0
        rows.append(row[keep])
        cols.append(nb[keep])
        vals.append(coef[keep])
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    S = sp.csr_matrix((vals, (rows, cols)), shape=(n_free, n_free))
    M = grid.eps[I, J] * r

    # Full-grid form: interior rows divided by r, Dirichlet rows = identity.
    flat = np.ravel_multi_index((I, J), (nr, nz))
    n_all = nr * nz
    fixed = np.flatnonzero(~free.ravel())
    A = sp.csr_matrix(
        (np.concatenate([vals / r[rows], np.ones(fixed.size)]),
         (np.concatenate([flat[rows], fixed]), np.concatenate([flat[cols], fixed]))),
        shape=(n_all, n_all))
    B = np.zeros(n_all)
    B[flat] = grid.eps[I, J]
    return EigenProblem(grid=grid, A=A, B=B, S=S, M=M, free=free)


@dataclass(frozen=True, eq=False)
class ModeSolution:
    """One TE0,n,p eigenmode.

    Field arrays have shape ``(grid.nr, grid.nz)``. ``e_theta`` is normalized
    so that ``sum(e_theta**2 * r) * dr * dz == 1`` and is positive at its
    largest-magnitude node. ``h_r`` and ``h_z`` share that normalization with
    the common ``1/(omega mu0)`` factor dropped.
    """

    frequency: float
    e_theta: np.ndarray
    h_r: np.ndarray
    h_z: np.ndarray
    n_radial: int
    p_axial: int
    grid: Grid2D
    eigenvalue: float = field(default=float("nan"))

    @property
    def indices(self) -> tuple[int, int]:
        return self.n_radial, self.p_axial

    def overlap(self, other: "ModeSolution") -> float:
        """|<e1, e2>| with the r-weighted inner product (1 for identical modes)."""
        g = self.grid
        return float(abs(np.sum(self.e_theta * other.e_theta * g.r[:, None])) * g.dr * g.dz)

    def flipped(self) -> "ModeSolution":
        return ModeSolution(self.frequency, -self.e_theta, -self.h_r, -self.h_z,
                            self.n_radial, self.p_axial, self.grid, self.eigenvalue)


def analytic_te0np(radius: float, height: float, n: int, p: int) -> float:
    """Resonance of the TE0np mode of an empty closed metal cylinder, in Hz."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    chi = jn_zeros(1, n)[-1]
    return C0 / (2 * math.pi) * math.hypot(chi / radius, p * math.pi / height)


def magnetic_fields(e: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """``h_r = dE/dz`` and ``h_z = (1/r) d(rE)/dr`` by centered differences."""
    dr, dz = grid.dr, grid.dz
    h_r = np.gradient(e, dz, axis=1, edge_order=2)
    dEdr = np.gradient(e, dr, axis=0, edge_order=2)
    h_z = np.empty_like(e)
    r = grid.r
    h_z[1:] = e[1:] / r[1:, None] + dEdr[1:]
    # E ~ a r + b r^3 near the axis, so (1/r) d(rE)/dr -> 2a.
    h_z[0] = 2 * (8 * e[1] - e[2]) / (6 * dr)
    h_r[0] = 0.0
    return h_r, h_z


def _sign_changes(line: np.ndarray, floor: float) -> int:
    s = line[np.abs(line) > floor]
    if s.size < 2:
        return 0
    return int(np.count_nonzero(np.sign(s[1:]) != np.sign(s[:-1])))


def classify_mode(mode: ModeSolution) -> tuple[int, int]:
    """Radial and axial mode indices from sign changes of ``e_theta``.

    Scans the radial line through the height of the field maximum and the
    axial line through its radius; each index is the number of interior sign
    changes plus one. Samples below 1e-6 of the maximum are ignored.
    """
    return _classify(mode.e_theta)


def _classify(e: np.ndarray) -> tuple[int, int]:
    peak = float(np.max(np.abs(e)))
    if peak == 0.0:
        raise ClassificationAmbiguous("field is identically zero")
    i0, j0 = np.unravel_index(np.argmax(np.abs(e)), e.shape)
    radial, axial = e[:, j0], e[i0, :]
    for name, line in (("radial", radial), ("axial", axial)):
        if np.max(np.abs(line)) < 1e-3 * peak:
            raise ClassificationAmbiguous(f"{name} scan line carries too little field")
    floor = 1e-6 * peak
    return _sign_changes(radial, floor) + 1, _sign_changes(axial, floor) + 1


def _mode_from_vector(problem: EigenProblem, k2: float, x: np.ndarray) -> ModeSolution:
    grid = problem.grid
    e = problem.expand(x)
    norm = math.sqrt(float(np.sum(e**2 * grid.r[:, None])) * grid.dr * grid.dz)
    e /= norm
    if e.flat[np.argmax(np.abs(e))] < 0:
        e = -e
    h_r, h_z = magnetic_fields(e, grid)
    n, p = _classify(e)
    for arr in (e, h_r, h_z):
        arr.setflags(write=False)
    return ModeSolution(frequency=float(f_of(k2)), e_theta=e, h_r=h_r, h_z=h_z,
                        n_radial=n, p_axial=p, grid=grid, eigenvalue=float(k2))


def _eigs(problem: EigenProblem, count: int, k2_low: float):
    n = problem.size
    nev = min(count, n - 2)
    M = sp.diags(problem.M).tocsc()
    v0 = np.ones(n)
    try:
        # Shift-invert: the eigenvalues just above the shift map to the largest
        # positive values of 1 / (k^2 - shift).
        w, v = spla.eigsh(problem.S.tocsc(), k=nev, M=M, sigma=k2_low, which="LA",
                          v0=v0, maxiter=5000, tol=0)
    except spla.ArpackNoConvergence as exc:
        if n > DENSE_LIMIT:
            raise SolverNoConvergence(
                "shift-invert Lanczos did not converge",
                {"unknowns": n, "requested": nev,
                 "converged": len(exc.eigenvalues), "shift_k2": k2_low}) from exc
        log.warning("ARPACK failed on %d unknowns; using dense solver", n)
        w, v = scipy.linalg.eigh(problem.S.toarray(), np.diag(problem.M),
                                 subset_by_value=(k2_low, np.inf))
        w, v = w[:nev], v[:, :nev]
    order = np.argsort(w)
    return w[order], v[:, order]


def solve_te0_modes(geometry: CavityGeometry, resolution: float = DEFAULT_RESOLUTION,
                    count: int = 6, window: tuple[float, float] = DEFAULT_WINDOW,
                    grid: Grid2D | None = None) -> list[ModeSolution]:
    """Lowest ``count`` TE0 modes with frequency inside ``window`` (Hz).

    The shift sits at the lower window edge; modes above the upper edge are
    dropped, so fewer than ``count`` may come back.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    f_lo, f_hi = window
    grid = grid if grid is not None else rasterize(geometry, resolution)
    problem = assemble_eigenproblem(grid)
    w, v = _eigs(problem, count, k_of(f_lo) ** 2)
    modes = [_mode_from_vector(problem, k2, v[:, i]) for i, k2 in enumerate(w)
             if k2 > 0 and f_of(k2) <= f_hi]
    if len(modes) < count:
        log.info("only %d of %d requested modes inside %.3g-%.3g Hz",
                 len(modes), count, f_lo, f_hi)
    return modes


def select_mode(modes: Sequence[ModeSolution], selector: tuple[int, int]) -> ModeSolution | None:
    """Lowest-frequency mode classified as ``selector``."""
    for m in modes:
        if m.indices == tuple(selector):
            return m
    return None


# ---------------------------------------------------------------------------
# plunger tuning

@dataclass(frozen=True)
class TuningPoint:
    depth: float
    frequency: float
    overlap: float
    mode: ModeSolution = field(repr=False, compare=False)


def _solve_depths(geometry, depths, resolution, count, window, jobs):
    def one(d):
        return solve_te0_modes(geometry.replace(plunger_depth=d), resolution, count, window)
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, depths))
    return [one(d) for d in depths]


def _best_overlap(reference: ModeSolution, modes: Sequence[ModeSolution]):
    if not modes:
        return None, 0.0
    scores = [reference.overlap(m) for m in modes]
    best = int(np.argmax(scores))
    return modes[best], scores[best]


def track_mode(geometry: CavityGeometry, depths: Sequence[float], mode_selector=NV_MODE,
               resolution: float = DEFAULT_RESOLUTION, count: int = 8,
               window=DEFAULT_WINDOW, jobs: int = 1, min_overlap: float = 0.5) -> list[TuningPoint]:
    """Follow one mode across plunger depths by field overlap.

    The mode is picked by classification at the first depth and afterwards
    by maximum overlap with the mode found at the previous depth.
    """
    depths = [float(d) for d in depths]
    if any(b < a for a, b in zip(depths, depths[1:])):
        raise ValueError("depths must be sorted ascending")
    solved = _solve_depths(geometry, depths, resolution, count, window, jobs)
    first = select_mode(solved[0], mode_selector)
    if first is None:
        raise ModeTrackingLost(
            f"no mode classified {tuple(mode_selector)} at depth {depths[0]:.4g} m; "
            f"found {[m.indices for m in solved[0]]}")
    points = [TuningPoint(depths[0], first.frequency, 1.0, first)]
    previous = first
    for d, modes in zip(depths[1:], solved[1:]):
        best, score = _best_overlap(previous, modes)
        if best is None or score < min_overlap:
            raise ModeTrackingLost(f"best overlap {score:.3f} < {min_overlap} at depth {d:.4g} m")
        if np.sum(best.e_theta * previous.e_theta) < 0:
            best = best.flipped()
        points.append(TuningPoint(d, best.frequency, score, best))
        previous = best
    return points


def tuning_curve(geometry: CavityGeometry, depths: Sequence[float], mode_selector=NV_MODE,
                 **kwargs) -> list[tuple[float, float]]:
    """(depth, frequency) pairs for the tracked mode."""
    return [(p.depth, p.frequency) for p in track_mode(geometry, depths, mode_selector, **kwargs)]


def find_plunger_for_frequency(geometry: CavityGeometry, target: float, mode_selector=NV_MODE,
                               resolution: float = DEFAULT_RESOLUTION, tolerance: float = 1e6,
                               samples: int = 8, count: int = 8, window=DEFAULT_WINDOW,
                               max_iter: int = 60) -> float:
    """Plunger depth that puts the selected mode at ``target`` Hz.

    A coarse tracked sweep brackets the target, then bisection refines the
    depth until the frequency is within ``tolerance``.
    """
    depths = np.linspace(0.0, geometry.max_plunger_depth, samples)
    points = track_mode(geometry, depths, mode_selector, resolution, count, window)
    freqs = np.array([p.frequency for p in points])
    if abs(freqs[0] - target) <= tolerance:
        return 0.0
    if abs(freqs[-1] - target) <= tolerance:
        return float(depths[-1])
    above = np.flatnonzero((freqs[:-1] - target) * (freqs[1:] - target) <= 0)
    if above.size == 0:
        raise TargetOutOfRange(
            f"target {target / 1e9:.4f} GHz outside tuning span "
            f"{freqs.min() / 1e9:.4f}-{freqs.max() / 1e9:.4f} GHz")
    k = int(above[0])
    lo, hi = points[k], points[k + 1]
    for _ in range(max_iter):
        mid = 0.5 * (lo.depth + hi.depth)
        modes = solve_te0_modes(geometry.replace(plunger_depth=mid), resolution, count, window)
        best, score = _best_overlap(lo.mode, modes)
        if best is None or score < 0.5:
            raise ModeTrackingLost(f"best overlap {score:.3f} at depth {mid:.4g} m")
        point = TuningPoint(mid, best.frequency, score, best)
        if abs(best.frequency - target) <= tolerance:
            return mid
        if (lo.frequency - target) * (best.frequency - target) <= 0:
            hi = point
        else:
            lo = point
    raise TargetOutOfRange(f"bisection stalled after {max_iter} steps near depth {mid:.6g} m")


# ---------------------------------------------------------------------------
# quality factor and stored power

def q_from_linewidth(f0: float, fwhm: float) -> float:
    if not fwhm > 0:
        raise ValueError("fwhm must be positive")
    return f0 / fwhm


def circulating_power(p_in: float, q_loaded: float, beta: float) -> float:
    """Intra-cavity power of a single-port resonator.

    ``4 beta / (1 + beta)**2`` is the fraction of incident power accepted by
    the port; it equals 1 at critical coupling.
    """
    if p_in < 0 or not q_loaded > 0 or not beta > 0:
        raise ValueError("need p_in >= 0, q_loaded > 0, beta > 0")
    return p_in * q_loaded * 4 * beta / (1 + beta) ** 2


# ---------------------------------------------------------------------------
# calibration

CALIBRATION_PARAMS = ("relative_permittivity", "ring_outer_radius", "ring_top")


@dataclass(frozen=True)
class CalibrationResult:
    geometry: CavityGeometry
    frequencies: dict
    residuals: dict
    cost: float
    sweeps: int

    @property
    def max_abs_residual(self) -> float:
        return max(abs(v) for v in self.residuals.values())


def _param_value(g: CavityGeometry, name: str) -> float:
    if name == "relative_permittivity":
        return g.dielectric.relative_permittivity
    return getattr(g, name)


def _param_bounds(g: CavityGeometry, name: str, resolution: float) -> tuple[float, float]:
    cell = 4.0001 * resolution
    if name == "relative_permittivity":
        return 1.0, 1e4
    if name == "ring_outer_radius":
        return g.ring_inner_radius + cell, g.shield_radius - resolution
    if name == "ring_top":
        return g.ring_bottom + cell, g.shield_height - g.plunger_depth
    raise ValueError(f"unknown calibration parameter {name!r}")


def _calibration_cost(g, targets, resolution, count, window):
    modes = solve_te0_modes(g, resolution, count, window)
    freqs, cost = {}, 0.0
    for sel, f_target in targets:
        m = select_mode(modes, sel)
        if m is None:
            freqs[tuple(sel)] = float("nan")
            cost += 1.0
        else:
            freqs[tuple(sel)] = m.frequency
            cost += ((m.frequency - f_target) / f_target) ** 2
    return cost, freqs


def calibrate_geometry(base: CavityGeometry, targets, free_params: Sequence[str],
                       resolution: float = DEFAULT_RESOLUTION, count: int = 8,
                       window=(0.3e9, 6e9), max_sweeps: int = 50,
                       tolerance: float = 1e-6) -> CalibrationResult:
    """Fit geometry parameters so classified modes land on target frequencies.

    Coordinate descent over ``free_params``: each sweep runs a bounded line
    search per parameter on the summed squared relative frequency error.
    Iteration stops when a sweep lowers the cost by less than ``tolerance``.

    ``targets`` is a sequence of ``((n, p), frequency_hz)`` pairs.
    """
    targets = [(tuple(sel), float(f)) for sel, f in targets]
    free_params = list(free_params)
    if not 1 <= len(targets) <= 3:
        raise ValueError("need between 1 and 3 targets")
    if len(free_params) > len(targets):
        raise ValueError(f"{len(free_params)} free parameters for {len(targets)} targets "
                         "is underdetermined")
    for name in free_params:
        if name not in CALIBRATION_PARAMS:
            raise ValueError(f"cannot calibrate {name!r}; choose from {CALIBRATION_PARAMS}")

    def evaluate(g):
        return _calibration_cost(g, targets, resolution, count, window)

    geometry = base
    cost, freqs = evaluate(geometry)
    sweeps = 0
    while cost > 1e-14 and free_params:
        if sweeps >= max_sweeps:
            raise CalibrationNoConvergence(
                f"cost {cost:.3e} after {sweeps} sweeps; frequencies {freqs}")
        sweeps += 1
        previous = cost
        for name in free_params:
            geometry, cost, freqs = _line_search(geometry, name, evaluate, resolution)
        log.debug("calibration sweep %d: cost %.3e", sweeps, cost)
        if previous - cost < tolerance:
            break
    residuals = {sel: (freqs[sel] - f) / f for sel, f in targets}
    return CalibrationResult(geometry, freqs, residuals, cost, sweeps)


def _line_search(g, name, evaluate, resolution, span=1.5, max_shifts=12):
    """Bounded Brent search on one parameter, re-centering the bracket when
    the optimum lands on its edge."""
    lo_b, hi_b = _param_bounds(g, name, resolution)
    x0 = _param_value(g, name)
    best = (evaluate(g)[0], x0)
    cache = {}

    def f(x):
        if x not in cache:
            cache[x] = evaluate(g.replace(**{name: x}))
        return cache[x][0]

    lo, hi = max(lo_b, x0 / span), min(hi_b, x0 * span)
    for _ in range(max_shifts):
        res = scipy.optimize.minimize_scalar(
            f, bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-9 * max(abs(x0), 1e-3)})
        x = float(res.x)
        if res.fun < best[0]:
            best = (float(res.fun), x)
        width = hi - lo
        if x - lo < 0.01 * width and lo > lo_b:
            lo, hi = max(lo_b, x / span), x
        elif hi - x < 0.01 * width and hi < hi_b:
            lo, hi = x, min(hi_b, x * span)
        else:
            break
    x = best[1]
    new = g.replace(**{name: x}) if x != x0 else g
    cost, freqs = evaluate(new)
    return new, cost, freqs
