"""Band-limited Karhunen-Loeve solutions and spherical transforms.

The degree-``l`` real coefficients of the solution started from a Cauchy
field pre-evolved for ``t0`` are

    c(t) = exp(-psi_l (t + t0)) c0 + sqrt(A_l) sigma_{l,t} z

with ``z`` standard normal; see :func:`sample_solution`.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DomainError, GridError
from .fields import CoefficientSet, PowerSpectrum, degree_of_index
from .harmonics import IsoLatGrid, coefficient_index, normalized_legendre, real_basis_matrix
from .operator import FractionalParams, psi_eigenvalue, sigma
from .rng import draw_coefficient_normals

__all__ = [
    "GridField",
    "SolutionState",
    "SphericalTransform",
    "analyze_coefficients",
    "propagate_cauchy",
    "sample_solution",
    "step",
    "synthesize",
    "write_coefficients_csv",
]

# Largest Legendre table (entries) kept in memory by a transform.
LEGENDRE_TABLE_CAP = 20_000_000
_ROOT2 = math.sqrt(2.0)


def _per_coefficient(per_degree: np.ndarray, L: int) -> np.ndarray:
    return np.asarray(per_degree, dtype=float)[degree_of_index(L)]


def decay_factors(L: int, s: float, params: FractionalParams) -> np.ndarray:
    """``exp(-psi_l s)`` for ``l = 0..L``."""
    if s < 0:
        raise DomainError("time must be non-negative")
    return np.exp(-np.asarray(psi_eigenvalue(np.arange(L + 1), params)) * s)


def noise_scales(L: int, s: float, params: FractionalParams, noise: PowerSpectrum) -> np.ndarray:
    """``sqrt(A_l) sigma_{l,s}`` for ``l = 0..L``."""
    if L > noise.lmax:
        raise DomainError(f"noise spectrum stops at l = {noise.lmax}, need {L}")
    return np.sqrt(noise.cl[: L + 1]) * _sigma_vector(L, float(s), params)


@functools.lru_cache(maxsize=256)
def _sigma_vector(L: int, s: float, params: FractionalParams) -> np.ndarray:
    sig = np.atleast_1d(sigma(np.arange(L + 1), s, params)).astype(float)
    sig.setflags(write=False)
    return sig


@dataclass(frozen=True)
class SolutionState:
    """Solution coefficients at time ``t`` with everything needed to advance them."""

    coeffs: CoefficientSet
    params: FractionalParams
    t: float
    t0: float
    noise_spectrum: PowerSpectrum
    init_spectrum: PowerSpectrum | None = None

    def __post_init__(self):
        if self.t < 0 or self.t0 < 0:
            raise DomainError("t and t0 must be non-negative")
        L = self.coeffs.L
        for spec in (self.noise_spectrum, self.init_spectrum):
            if spec is not None and spec.lmax < L:
                raise DomainError("spectrum band is shorter than the coefficient band")

    @property
    def L(self) -> int:
        return self.coeffs.L


def propagate_cauchy(initial: CoefficientSet, t0: float, params: FractionalParams) -> CoefficientSet:
    """Multiply degree ``l`` coefficients by ``exp(-psi_l t0)``."""
    if t0 < 0:
        raise DomainError("t0 must be non-negative")
    if t0 == 0:
        return initial
    fac = _per_coefficient(decay_factors(initial.L, t0, params), initial.L)
    return CoefficientSet(initial.L, fac * initial.coeffs, initial.time_tag)


def sample_solution(
    init: CoefficientSet,
    t: float,
    t0: float,
    params: FractionalParams,
    noise_spectrum: PowerSpectrum,
    rng,
    init_spectrum: PowerSpectrum | None = None,
) -> SolutionState:
    """Draw the solution at time ``t`` given the (un-propagated) initial field.

    Only the single-time law is represented: the stochastic integral of each
    coefficient is replaced by ``sigma_{l,t} z`` with ``z`` drawn from ``rng``.
    """
    if t < 0:
        raise DomainError("time must be non-negative")
    L = init.L
    drift = _per_coefficient(decay_factors(L, t + t0, params), L) * init.coeffs
    scale = _per_coefficient(noise_scales(L, t, params, noise_spectrum), L)
    z = draw_coefficient_normals(rng, L)
    coeffs = CoefficientSet(L, drift + scale * z, time_tag=t)
    return SolutionState(coeffs, params, float(t), float(t0), noise_spectrum, init_spectrum)


def step(state: SolutionState, h: float, rng) -> SolutionState:
    """Advance by ``h``: ``c <- exp(-psi h) c + sqrt(A) sigma_h U`` with fresh ``U``.

    For ``H = 1/2`` this is the exact Markov transition. For ``H > 1/2``
    successive innovations are independent here, which ignores the
    correlation of fBm increments across steps.
    """
    if h <= 0:
        raise DomainError("need h > 0")
    L = state.L
    fac = _per_coefficient(decay_factors(L, h, state.params), L)
    scale = _per_coefficient(noise_scales(L, h, state.params, state.noise_spectrum), L)
    u = draw_coefficient_normals(rng, L)
    t_new = state.t + h
    coeffs = CoefficientSet(L, fac * state.coeffs.coeffs + scale * u, time_tag=t_new)
    return replace(state, coeffs=coeffs, t=t_new)


# ---------------------------------------------------------------------------
# Grid fields and transforms


@dataclass(frozen=True)
class GridField:
    """Point values on a grid, flat and ring-major (index ``ring * n_phi + k``)."""

    grid: IsoLatGrid
    values: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size != self.grid.n_points:
            raise GridError(f"expected {self.grid.n_points} values, got {vals.size}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def as_rings(self) -> np.ndarray:
        return self.values.reshape(self.grid.n_rings, self.grid.n_phi)

    def squared_norm(self) -> float:
        """Quadrature estimate of the squared L2 norm (normalized measure)."""
        return self.grid.integrate(self.values ** 2)

    def write_csv(self, path) -> None:
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "phi", "value"])
            for th, ph, v in zip(pts.theta.tolist(), pts.phi.tolist(), self.values.tolist()):
                w.writerow([repr(th), repr(ph), repr(v)])


def write_coefficients_csv(coeffs: CoefficientSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ell", "m_signed", "value"])
        idx = 0
        vals = coeffs.coeffs.tolist()
        for ell in range(coeffs.L + 1):
            for m in range(-ell, ell + 1):
                w.writerow([ell, m, repr(vals[idx])])
                idx += 1


def read_coefficients_csv(path) -> CoefficientSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DomainError("empty coefficient file")
    L = max(int(r["ell"]) for r in rows)
    c = np.zeros((L + 1) ** 2)
    for r in rows:
        c[coefficient_index(int(r["ell"]), int(r["m_signed"]))] = float(r["value"])
    return CoefficientSet(L, c)


@dataclass
class SphericalTransform:
    """Ring-wise Legendre accumulation plus longitude FFT for one (grid, L).

    Legendre tables are computed once and cached when they fit under
    ``table_cap`` entries; otherwise they are recomputed per order ``m``.
    Instances are read-only after construction and may be shared by threads.
    """

    grid: IsoLatGrid
    L: int
    table_cap: int = LEGENDRE_TABLE_CAP
    _tables: list | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.L < 0:
            raise DomainError("band limit must be non-negative")
        entries = (self.L + 1) * (self.L + 2) // 2 * self.grid.n_rings
        if entries <= self.table_cap:
            self._tables = [self._legendre(m) for m in range(self.L + 1)]

    def _legendre(self, m: int) -> np.ndarray:
        # (L - m + 1, n_rings)
        return normalized_legendre(
            self.L, m, self.grid.cos_colatitudes, np.sin(self.grid.ring_colatitudes)
        )

    def legendre(self, m: int) -> np.ndarray:
        if self._tables is not None:
            return self._tables[m]
        return self._legendre(m)

    def _check_band(self, coeffs: CoefficientSet):
        if coeffs.L > self.L:
            raise DomainError(f"coefficients have band {coeffs.L} > transform band {self.L}")

    def ring_modes(self, coeffs: CoefficientSet) -> np.ndarray:
        """Complex Fourier modes ``a_m - i b_m`` per ring, shape ``(n_rings, L + 1)``."""
        self._check_band(coeffs)
        Lc = coeffs.L
        c = coeffs.coeffs
        modes = np.zeros((self.grid.n_rings, Lc + 1), dtype=complex)
        for m in range(Lc + 1):
            P = self.legendre(m)[: Lc - m + 1]
            ells = np.arange(m, Lc + 1)
            if m == 0:
                modes[:, 0] = c[coefficient_index(ells, 0)] @ P
            else:
                a = c[coefficient_index(ells, m)] @ P
                b = c[coefficient_index(ells, -m)] @ P
                modes[:, m] = _ROOT2 * (a - 1j * b)
        return modes

    def synthesize_fft(self, coeffs: CoefficientSet) -> np.ndarray:
        modes = self.ring_modes(coeffs)
        K = self.grid.n_phi
        G = np.zeros((self.grid.n_rings, K), dtype=complex)
        # wrap orders onto the K longitude bins (aliasing is exact evaluation)
        np.add.at(G, (slice(None), np.arange(modes.shape[1]) % K), modes)
        return (K * np.fft.ifft(G, axis=1)).real.ravel()

    def synthesize_direct(self, coeffs: CoefficientSet) -> np.ndarray:
        """Evaluate the expansion pointwise with no FFT (reference path)."""
        modes = self.ring_modes(coeffs)
        phi = self.grid.longitudes
        m = np.arange(modes.shape[1])
        basis = np.exp(1j * np.outer(m, phi))
        return (modes @ basis).real.ravel()

    def analyze(self, values: np.ndarray, L: int | None = None) -> CoefficientSet:
        """Quadrature projection onto the real basis up to ``L``."""
        L = self.L if L is None else L
        if L > self.L:
            raise DomainError(f"requested band {L} exceeds transform band {self.L}")
        grid = self.grid
        K = grid.n_phi
        F = np.fft.fft(np.asarray(values, dtype=float).reshape(grid.n_rings, K), axis=1) / K
        F = F * grid.ring_weights[:, None]
        out = np.zeros((L + 1) ** 2)
        for m in range(L + 1):
            P = self.legendre(m)[: L - m + 1]
            col = F[:, m % K]
            ells = np.arange(m, L + 1)
            if m == 0:
                out[coefficient_index(ells, 0)] = P @ col.real
            else:
                out[coefficient_index(ells, m)] = _ROOT2 * (P @ col.real)
                out[coefficient_index(ells, -m)] = -_ROOT2 * (P @ col.imag)
        return CoefficientSet(L, out)


def synthesize(
    coeffs: CoefficientSet,
    grid: IsoLatGrid,
    method: str = "fft",
    require_exact: bool = False,
    transform: SphericalTransform | None = None,
) -> GridField:
    """Evaluate a coefficient set on a grid.

    ``method`` is ``"fft"`` (default), ``"direct"`` (per-ring Fourier sums
    without FFT) or ``"matrix"`` (dense real basis matrix, small ``L`` only).
    With ``require_exact`` the grid must integrate products of band-``L``
    fields exactly.
    """
    if require_exact and not grid.is_exact_for(coeffs.L):
        raise GridError(f"grid does not resolve band limit {coeffs.L} exactly")
    if method == "matrix":
        pts = grid.points()
        values = real_basis_matrix(coeffs.L, pts.theta, pts.phi) @ coeffs.coeffs
        return GridField(grid, values, coeffs.time_tag)
    tr = transform if transform is not None else SphericalTransform(grid, coeffs.L)
    if method == "fft":
        values = tr.synthesize_fft(coeffs)
    elif method == "direct":
        values = tr.synthesize_direct(coeffs)
    else:
        raise ValueError(f"unknown synthesis method {method!r}")
    return GridField(grid, values, coeffs.time_tag)


def analyze_coefficients(
    field_: GridField,
    grid: IsoLatGrid | None = None,
    L: int | None = None,
    strict: bool = True,
    transform: SphericalTransform | None = None,
) -> CoefficientSet:
    """Project grid values onto the real basis up to degree ``L``.

    In strict mode the grid must be exact for band ``L`` so that
    ``analyze(synthesize(c)) == c`` up to rounding.
    """
    grid = field_.grid if grid is None else grid
    if L is None:
        if transform is None:
            raise DomainError("band limit required")
        L = transform.L
    if strict and not grid.is_exact_for(L):
        raise GridError(f"grid is not exact for band limit {L}")
    tr = transform if transform is not None else SphericalTransform(grid, L)
    return tr.analyze(field_.values, L).with_time(field_.time_tag)
