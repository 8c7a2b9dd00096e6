"""Eigenmodes of a plunger-tuned dielectric ring resonator and the ODMR
response of NV centers driven by its near field."""

from .axisinversion import (AxisCandidateSet, ThreePointMeasurement, brute_force_best,
                            director_angle, end_to_end_axis_recovery, forward_contrasts,
                            invert_axis_closed_form, invert_axis_least_squares)
from .errors import *  # noqa: F401,F403
from .fieldmap import FieldPlane, field_at, field_ratio, fields_at, peak_radius, sample_plane
from .geometry import (CavityGeometry, Grid2D, Material, Region, default_geometry,
                       hollow_geometry, rasterize)
from .modesolver import (CalibrationResult, ModeSolution, analytic_te0np, calibrate_geometry,
                         circulating_power, find_plunger_for_frequency, q_from_linewidth,
                         select_mode, solve_te0_modes, track_mode, tuning_curve)
from .nvodmr import (NVCenter, ODMRFit, ODMRSpectrum, contrast_scan, fit_odmr, line_path,
                     saturation_contrast, synthesize_spectrum)

__version__ = "0.1.0"
