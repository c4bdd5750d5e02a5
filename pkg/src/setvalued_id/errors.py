"""Semantic exception hierarchy.

The CLI maps these to exit codes: ConfigError and its subclasses mean a bad
configuration or degenerate input data (exit 2); NumericalFault means the
estimator produced a non-finite iterate (exit 3) and should never fire under
a sane configuration.
"""


class SetValuedIdError(Exception):
    """Base class for all package errors."""


class ConfigError(SetValuedIdError):
    """Invalid configuration value, key, or incompatible inputs."""


class TableDomainError(ConfigError):
    """Query outside the domain of a tabulated noise distribution."""


class ShapeError(ConfigError):
    """Misaligned or wrongly shaped array inputs."""


class SingularityError(ConfigError):
    """A matrix that must be invertible is rank deficient."""

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


class InversionError(ConfigError):
    """CDF inversion requested at 0 or 1 where the inverse is unbounded."""


class StatisticsError(ConfigError):
    """Not enough data for the requested statistic."""


class RateDegenerateError(SetValuedIdError):
    """Density lower bound is zero, so the adaptive step size is unbounded."""


class NumericalFault(SetValuedIdError):
    """Non-finite estimate encountered; identifies the failing run/seed."""
