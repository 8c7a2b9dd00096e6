import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcavity.axisinversion import (ThreePointMeasurement, brute_force_best, director_angle,
                                    end_to_end_axis_recovery, forward_contrasts, gauge,
                                    invert_axis_closed_form, invert_axis_least_squares,
                                    profile_residual)
from nvcavity.errors import DegenerateRatio, InconsistentMeasurement
from nvcavity.fieldmap import peak_radius, protocol_positions
from nvcavity.geometry import MM
from nvcavity.nvodmr import NVCenter, dbm_to_watt, drive_for_saturation
from oracles import angle_deg, director_gauge, three_point_contrasts

HALF_PI = math.pi / 2
RHOS = (0.25, 0.5, 1.0, 2.0)
KAPPAS = (0.5, 1.0, 3.0)


def random_axes(n, seed):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def measure(axis, rho, kappa, phi_a=0.0, phi_b=HALF_PI):
    return ThreePointMeasurement(*forward_contrasts(axis, rho, phi_a, phi_b, kappa), rho, phi_a, phi_b)


unit_axes = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))


# -- forward model -----------------------------------------------------------------

def test_forward_z_axis():
    assert forward_contrasts((0, 0, 1), 0.7, 0, HALF_PI, 2.5) == (0.0, 2.5, 2.5)


def test_forward_diagonal_axis():
    n = np.ones(3) / math.sqrt(3)
    assert forward_contrasts(n, 0.5, 0, HALF_PI, 1.0) == pytest.approx((1 / 6, 2 / 3, 2 / 3), rel=1e-14)


@settings(max_examples=100)
@given(axis=unit_axes, rho=st.floats(0.1, 3), kappa=st.floats(0.01, 10),
       pa=st.floats(0, math.pi), pb=st.floats(0, math.pi))
def test_forward_matches_vector_oracle_and_is_linear(axis, rho, kappa, pa, pb):
    ours = forward_contrasts(axis, rho, pa, pb, kappa)
    assert ours == pytest.approx(three_point_contrasts(axis, rho, pa, pb, kappa), rel=1e-9, abs=1e-12)
    assert forward_contrasts(axis, rho, pa, pb, 2 * kappa) == pytest.approx(tuple(2 * c for c in ours), rel=1e-12, abs=1e-15)


# -- measurement and gauge ---------------------------------------------------------------

@pytest.mark.parametrize("args", [(-0.1, 1, 1, 1), (0, 1, 1, math.inf), (0, 1, 1, 1, 0.2, 0.2 + math.pi)])
def test_measurement_invariants(args):
    with pytest.raises(ValueError):
        ThreePointMeasurement(*args)


@settings(max_examples=100)
@given(axis=unit_axes)
def test_gauge_matches_oracle(axis):
    g = gauge(axis)
    assert np.allclose(g, director_gauge(axis), atol=1e-9)
    assert g[2] >= 0
    assert director_angle(g, axis) < 1e-6


# -- closed form ---------------------------------------------------------------------------

def test_closed_form_diagonal_example():
    cands = invert_axis_closed_form(ThreePointMeasurement(1 / 6, 2 / 3, 2 / 3, 0.5))
    assert cands.kappa == pytest.approx(1.0, rel=1e-14)
    for c in cands.candidates:
        assert np.allclose(np.abs(c), 1 / math.sqrt(3), atol=1e-12)
    assert len(cands) == 4


def test_closed_form_z_axis_unique():
    cands = invert_axis_closed_form(ThreePointMeasurement(0.0, 0.4, 0.4, 1.3))
    assert len(cands) == 1
    assert np.allclose(cands.candidates[0], (0, 0, 1))


def test_closed_form_inconsistent():
    kappa = (0.1 + 0.25 * (0.9 + 0.2)) / 0.5
    assert 0.9 > kappa  # c_a above the implied scale
    with pytest.raises(InconsistentMeasurement):
        invert_axis_closed_form(ThreePointMeasurement(0.1, 0.9, 0.2, 0.5))


def test_closed_form_all_zero():
    with pytest.raises(InconsistentMeasurement):
        invert_axis_closed_form(ThreePointMeasurement(0, 0, 0, 1.0))


def test_closed_form_needs_orthogonal_azimuths():
    with pytest.raises(ValueError):
        invert_axis_closed_form(ThreePointMeasurement(0.1, 0.2, 0.3, 1.0, 0.0, 1.0))
    with pytest.raises(DegenerateRatio):
        invert_axis_closed_form(ThreePointMeasurement(0.0, 0.2, 0.3, 0.0))


@pytest.mark.parametrize("rho", RHOS)
@pytest.mark.parametrize("kappa", KAPPAS)
def test_closed_form_round_trip(rho, kappa):
    for n in random_axes(100, seed=2024):
        m = measure(n, rho, kappa)
        cands = invert_axis_closed_form(m)
        assert 1 <= len(cands) <= 4
        assert cands.kappa > 0
        assert min(angle_deg(c, director_gauge(n)) for c in cands.candidates) < 1e-6
        for c in cands.candidates:
            assert c[2] >= 0
            assert np.max(np.abs(np.array(forward_contrasts(c, rho, 0, HALF_PI, cands.kappa)) - m.contrasts)) < 1e-8


@pytest.mark.parametrize("axis, count", [
    ((0.3, 0.4, math.sqrt(0.75)), 4), ((0.6, 0.0, 0.8), 2), ((0.0, 0.6, 0.8), 2),
    ((0.6, 0.8, 0.0), 2), ((1.0, 0.0, 0.0), 1), ((0.0, 0.0, 1.0), 1)])
def test_candidate_count_by_nonzero_components(axis, count):
    # each nonzero component doubles the sign choices; the director gauge halves them
    assert len(invert_axis_closed_form(measure(axis, 0.8, 1.0))) == count


# -- least squares ------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_least_squares_agrees_with_closed_form(seed):
    rng = np.random.default_rng(seed)
    n = random_axes(1, seed)[0]
    m = measure(n, float(rng.choice(RHOS)), float(rng.choice(KAPPAS)))
    cf = invert_axis_closed_form(m)
    ls = invert_axis_least_squares(m)
    assert len(ls) == len(cf)
    for c in cf.candidates:
        assert min(director_angle(c, d) for d in ls.candidates) < 1e-6


def test_least_squares_general_azimuths():
    n = random_axes(1, 5)[0]
    m = measure(n, 1.1, 0.7, 0.3, 1.2)
    ls = invert_axis_least_squares(m, jobs=2)
    assert min(director_angle(c, n) for c in ls.candidates) < 1e-5


def test_noisy_median_error():
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        n = random_axes(1, 100 + seed)[0]
        c = np.array(forward_contrasts(n, 1.0, 0, HALF_PI, 1.0)) * (1 + 0.05 * rng.normal(size=3))
        m = ThreePointMeasurement(*np.clip(c, 0, None), 1.0)
        errs.append(min(director_angle(v, n) for v in invert_axis_least_squares(m).candidates))
    assert np.median(errs) < 5.0


@pytest.mark.parametrize("seed", range(3))
def test_fourth_point_does_not_raise_residual(seed):
    n = random_axes(1, 40 + seed)[0]
    m = measure(n, 0.9, 1.0)
    extra = [(math.pi / 4, three_point_contrasts(n, 0.9, math.pi / 4, 0, 1.0)[1])]
    r3 = invert_axis_least_squares(m).residual
    r4 = invert_axis_least_squares(m, extra)
    assert r4.residual <= r3 + 1e-20
    # the diagonal azimuth fixes the relative sign of n_x and n_y
    assert len(r4) <= len(invert_axis_least_squares(m))


@pytest.mark.parametrize("seed", range(10))
def test_brute_force_finds_nothing_better(seed):
    rng = np.random.default_rng(500 + seed)
    n = random_axes(1, 500 + seed)[0]
    c = np.array(forward_contrasts(n, 0.8, 0, HALF_PI, 1.0)) * (1 + 0.05 * rng.normal(size=3))
    m = ThreePointMeasurement(*np.clip(c, 0, None), 0.8)
    ls = invert_axis_least_squares(m)
    best = min(profile_residual(v, m.rho, m.azimuths, m.contrasts) for v in ls.candidates)
    brute, _ = brute_force_best(m)
    assert brute >= best * (1 - 1e-9) - 1e-18


def test_degenerate_rho_least_squares():
    with pytest.raises(DegenerateRatio):
        invert_axis_least_squares(ThreePointMeasurement(0.0, 0.2, 0.3, 0.0))


# -- pipeline on simulated fields ---------------------------------------------------------

def test_end_to_end_z_axis(te013):
    nv = NVCenter()
    path = protocol_positions(peak_radius(te013, 1 * MM), 1 * MM)
    rec = end_to_end_axis_recovery(te013, nv, 1 * MM, drive_for_saturation(te013, nv, path, 0.01))
    assert rec.max_saturation <= 0.01
    best, _ = rec.candidates.nearest(nv.axis)
    assert best[2] ** 2 > 0.99


def test_end_to_end_rejects_saturating_drive(te013):
    with pytest.raises(ValueError):
        end_to_end_axis_recovery(te013, NVCenter.with_axis((1, 0, 0)), 1 * MM, drive_power=dbm_to_watt(0))
