"""Exception hierarchy shared across the package."""


class IceBeemError(Exception):
    """Base class for all package errors."""


class NumericalError(IceBeemError):
    """A numerical routine failed (non-convergence, NaN, singular system)."""


class NotPositiveDefiniteError(NumericalError):
    pass


class DegenerateColumnError(NumericalError):
    """A data column has zero variance, so correlations are undefined."""


class ArchitectureError(IceBeemError):
    """A network violates a structural constraint (widths, rank)."""


class ConfigError(IceBeemError):
    """Invalid user configuration."""
