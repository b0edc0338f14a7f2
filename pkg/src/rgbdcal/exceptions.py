"""Exception hierarchy for the calibration toolkit."""


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


class PointBehindCamera(CalibrationError):
    """A 3D point has non-positive depth in the camera frame."""


class VisibilityExhausted(CalibrationError):
    """Rejection sampling failed to find points visible to all cameras."""


class DegenerateConfiguration(CalibrationError):
    """Point configuration is rank-deficient (e.g. coplanar) for DLT."""


class InsufficientPoints(CalibrationError):
    """Fewer correspondences than the estimator requires."""


class MissingCorrespondence(CalibrationError):
    """A feature id lacks the measurement needed to pair it."""


class DimensionMismatch(CalibrationError):
    """Parameter vector length does not match the expected layout."""


class JacobianMismatch(CalibrationError):
    """Analytic and finite-difference Jacobians disagree in check mode."""


class SingularSystem(CalibrationError):
    """The damped normal equations could not be factorized."""


class NonFiniteCost(CalibrationError):
    """NaN or Inf encountered while evaluating an objective."""


class NoCorrespondences(CalibrationError):
    """No 3D correspondences available for variance estimation."""


class NoObservations(CalibrationError):
    """No 2D observations available for variance estimation."""


class GaugeCamera(CalibrationError):
    """Pose error is undefined for the gauge camera (zero translation)."""
