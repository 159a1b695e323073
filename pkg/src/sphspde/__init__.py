"""Simulation of fractional stochastic PDEs on the sphere driven by fractional Brownian motion."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConfigError,
    DomainError,
    GridError,
    NonConvergenceError,
    SpectrumFormatError,
    SphSpdeError,
)
from .fields import CoefficientSet, PowerSpectrum, sample_isotropic  # noqa: E402
from .harmonics import Direction, IsoLatGrid, make_grid  # noqa: E402
from .operator import FractionalParams, psi_eigenvalue, sigma_sq  # noqa: E402
from .rng import StreamFactory  # noqa: E402

__all__ = [
    "CoefficientSet",
    "ConfigError",
    "Direction",
    "DomainError",
    "FractionalParams",
    "GridError",
    "IsoLatGrid",
    "NonConvergenceError",
    "PowerSpectrum",
    "SpectrumFormatError",
    "SphSpdeError",
    "StreamFactory",
    "make_grid",
    "psi_eigenvalue",
    "sample_isotropic",
    "sigma_sq",
]
