"""Independent reference implementations used as test oracles.

Nothing here imports the package under test; each oracle is written from the
underlying formula with different tools (mpmath Bessel zeros, explicit
vector algebra, plain loops) so agreement is meaningful.
"""

import math

import mpmath
import numpy as np

C0 = 299_792_458.0


def bessel_j1_zero(n):
    return float(mpmath.besseljzero(1, n))


def te0np_frequency(radius, height, n, p):
    """Closed metal cylinder TE0np resonance in Hz."""
    kc = bessel_j1_zero(n) / radius
    kz = p * math.pi / height
    return C0 * math.sqrt(kc**2 + kz**2) / (2 * math.pi)


def te0np_fields(radius, height, n, p, r, z):
    """Analytic (E_theta, dE/dz, (1/r) d(rE)/dr) of the hollow-cylinder mode.

    ``z`` is measured from the bottom plate.
    """
    kc = bessel_j1_zero(n) / radius
    kz = p * math.pi / height
    R, Z = np.meshgrid(r, z, indexing="ij")
    j1 = np.array([[float(mpmath.besselj(1, kc * x)) for x in R[:, 0]]]).T
    j0 = np.array([[float(mpmath.besselj(0, kc * x)) for x in R[:, 0]]]).T
    e = j1 * np.sin(kz * Z)
    h_r = j1 * kz * np.cos(kz * Z)
    # (1/r) d(r J1(kr))/dr = k J0(kr)
    h_z = kc * j0 * np.sin(kz * Z)
    return e, h_r, h_z


def lowest_hollow_modes(radius, height, count):
    """``count`` lowest (n, p, f) of the closed cylinder, sorted by frequency."""
    table = [(n, p, te0np_frequency(radius, height, n, p)) for n in range(1, 6) for p in range(1, 8)]
    return sorted(table, key=lambda t: t[2])[:count]


def annulus_area(r_in, r_out, z_lo, z_hi):
    """Meridional cross-section of the ring (an r-z rectangle)."""
    return (r_out - r_in) * (z_hi - z_lo)


def perpendicular_fraction(field, axis):
    """|H x n| / |H| computed with a cross product."""
    h = np.asarray(field, float)
    n = np.asarray(axis, float)
    return float(np.linalg.norm(np.cross(h, n)) / np.linalg.norm(h))


def saturation(ceiling, p, p_sat):
    return ceiling * p / (p + p_sat)


def lorentz_dip(f, center, fwhm, depth):
    g = fwhm / 2
    return 1 - depth * g * g / ((f - center) ** 2 + g * g)


def three_point_contrasts(axis, rho, phi_a, phi_b, kappa):
    """Forward protocol model: center field (0, 0, rho), rim field unit radial."""
    n = np.asarray(axis, float)

    def c(h):
        h = np.asarray(h, float)
        perp = h - np.dot(h, n) * n
        return kappa * float(np.dot(perp, perp))

    return (c([0, 0, rho]), c([math.cos(phi_a), math.sin(phi_a), 0]),
            c([math.cos(phi_b), math.sin(phi_b), 0]))


def bilinear(grid_x, grid_y, values, x, y):
    """Textbook bilinear interpolation at one point (loops, no vectorization)."""
    i = max(0, min(len(grid_x) - 2, int(math.floor((x - grid_x[0]) / (grid_x[1] - grid_x[0])))))
    j = max(0, min(len(grid_y) - 2, int(math.floor((y - grid_y[0]) / (grid_y[1] - grid_y[0])))))
    tx = (x - grid_x[i]) / (grid_x[i + 1] - grid_x[i])
    ty = (y - grid_y[j]) / (grid_y[j + 1] - grid_y[j])
    return ((1 - tx) * (1 - ty) * values[i, j] + tx * (1 - ty) * values[i + 1, j]
            + (1 - tx) * ty * values[i, j + 1] + tx * ty * values[i + 1, j + 1])


def director_gauge(n, zero=1e-9):
    """Flip a director to n_z >= 0, then n_x >= 0, then n_y >= 0.

    Components below ``zero`` count as vanishing (tie on the equator).
    """
    n = np.asarray(n, float)
    for k in (2, 0, 1):
        if abs(n[k]) >= zero:
            return n if n[k] > 0 else -n
    return n


def angle_deg(a, b):
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    # half-angle form: |a - b| and |a + b| are both well conditioned
    t = 2 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))
    return math.degrees(min(t, math.pi - t))
