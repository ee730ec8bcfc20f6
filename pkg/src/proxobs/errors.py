"""Exception types raised by the estimation library."""


class EstimatorError(Exception):
    """Base class for all library-specific failures."""


class ZeroDirection(EstimatorError):
    """The affine direction vector has zero norm, so the prox is undefined."""


class NoConvergence(EstimatorError):
    """An iterative search exhausted its budget without meeting tolerance."""


class NonDiagonalV(EstimatorError):
    """A sensor-by-sensor update needs a diagonal measurement weighting."""


class ZeroRow(EstimatorError):
    """An observation matrix row is identically zero."""


class NonFiniteState(EstimatorError):
    """A state prediction produced NaN or infinity."""


class NonFiniteMeasurement(EstimatorError):
    """A measurement vector contains NaN or infinity."""


class SingularCovariance(EstimatorError):
    """A covariance matrix lost positive definiteness."""


class SingularInput(EstimatorError):
    """A weighting recursion input is singular or not positive definite."""


class UnboundedF(EstimatorError):
    """An output-injection factor is singular beyond the allowed bracket."""


class InvalidDecay(EstimatorError):
    """A decay rate outside (0, 1) was supplied for a geometric bound."""
