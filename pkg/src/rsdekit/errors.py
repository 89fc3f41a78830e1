"""Exception types shared across the toolkit."""


class RsdekitError(Exception):
    """Base class for all toolkit errors."""


class AmbiguousProjection(RsdekitError):
    """Two candidate nearest points are numerically tied.

    Only possible for nonconvex domain kinds; signals that a driver step
    left the uniqueness tube of the nearest-point map.
    """


class StartOutsideDomain(RsdekitError):
    """Initial state is not in the closure of the domain."""


class GridMismatch(RsdekitError):
    """A required grid node (e.g. a dyadic node) is absent from a path's grid."""


class TubeTooNarrow(RsdekitError):
    """Rejection sampling of the tube event exhausted its attempt budget."""

    def __init__(self, message, acceptance_estimate=None, attempts=None):
        super().__init__(message)
        self.acceptance_estimate = acceptance_estimate
        self.attempts = attempts


class UnsupportedKind(RsdekitError):
    """The domain lacks the metadata needed for a requested check."""


class ConfigError(RsdekitError):
    """Invalid or unknown configuration key/value."""
