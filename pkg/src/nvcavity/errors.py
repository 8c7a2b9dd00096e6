"""Exception types raised by the simulator."""


class NVCavityError(Exception):
    """Base class for all simulator errors."""


class ConfigError(NVCavityError):
    """Malformed or incomplete configuration."""


class ResolutionTooCoarse(NVCavityError):
    """The dielectric ring would span fewer than four grid cells."""


class SolverNoConvergence(NVCavityError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ClassificationAmbiguous(NVCavityError):
    """Scan line through the field maximum carries too little amplitude."""


class ModeTrackingLost(NVCavityError):
    """No mode at the new plunger depth overlaps the tracked one well enough."""


class TargetOutOfRange(NVCavityError):
    """Requested frequency is outside the plunger tuning span."""


class CalibrationNoConvergence(NVCavityError):
    pass


class OffsetOutsideDomain(NVCavityError):
    """Sample point lies outside the solved region below the cavity."""


class DegenerateRatio(NVCavityError):
    pass


class FitNoConvergence(NVCavityError):
    pass


class InsufficientSpan(NVCavityError):
    """Spectrum does not extend far enough around the dip to fit it."""


class InconsistentMeasurement(NVCavityError):
    """No NV axis reproduces the measured contrasts."""
