"""Exception hierarchy shared across the package."""


class DistMLEError(Exception):
    """Base class for package errors."""


class DomainError(DistMLEError, ValueError):
    """A parameter lies outside the natural-parameter (or theta) domain."""


class MomentRangeError(DistMLEError, ValueError):
    """A moment vector is outside the range of the moment map.

    Kept distinct from :class:`DomainError` so callers can tell bad data
    (e.g. a zero empirical variance) from bad parameters.
    """


class RankDeficiencyError(DistMLEError, ValueError):
    """The embedding Jacobian is not of full column rank."""


class FitError(DistMLEError, RuntimeError):
    """A model fitter failed; the original exception is chained."""


class ConfigError(DistMLEError, ValueError):
    """Invalid experiment configuration."""
