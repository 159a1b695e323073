"""Exception types raised across the package."""


class SphSpdeError(Exception):
    """Base class for all package errors."""


class DomainError(SphSpdeError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GridError(SphSpdeError, ValueError):
    """A grid is too large, or too coarse for the requested exactness."""


class ConfigError(SphSpdeError, ValueError):
    """A study or CLI configuration is inconsistent."""


class SpectrumFormatError(SphSpdeError, ValueError):
    """A power spectrum file could not be parsed."""


class NonConvergenceError(SphSpdeError, ArithmeticError):
    """A series or quadrature failed to reach its tolerance."""
