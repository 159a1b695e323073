"""Legendre functions, spherical harmonics and iso-latitude grids.

All inner products use the normalized surface measure, so the sphere has
total mass 1 and ``Y_00 == 1``.

Phase convention
----------------
``assoc_legendre`` returns the Ferrers function without the Condon-Shortley
phase, ``P_l^m(t) = (1 - t^2)^(m/2) d^m/dt^m P_l(t)`` for ``m >= 0``. The
complex harmonic is

    Y_lm(theta, phi) = sqrt((2l+1) (l-m)! / (l+m)!) P_l^m(cos theta) e^{i m phi}

for ``m >= 0`` and negative orders are defined by
``Y_{l,-m} = (-1)^m conj(Y_lm)``.  The real basis used everywhere else is

    m_signed = 0   ->  Y_l0
    m_signed = +m  ->  sqrt(2) Re Y_lm
    m_signed = -m  ->  sqrt(2) Im Y_lm

and flat coefficient arrays are indexed by ``l*l + l + m_signed``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, GridError

__all__ = [
    "Direction",
    "GridKind",
    "IsoLatGrid",
    "assoc_legendre",
    "coefficient_index",
    "gauss_legendre",
    "legendre_p",
    "legendre_p_all",
    "make_grid",
    "normalized_legendre",
    "real_basis",
    "real_basis_matrix",
    "sph_harmonic",
]

TWO_PI = 2.0 * math.pi
DOMAIN_SLACK = 1e-12
# Diagonal seeds below exp(-690) ~ 1e-300 are flushed to zero; the functions
# they start are negligible for any field of order one and denormals are slow.
_LOG_SEED_FLOOR = -690.0
MAX_GRID_POINTS = 50_000_000


def coefficient_index(ell, m_signed):
    """Flat position of ``(ell, m_signed)`` in a real coefficient array."""
    return ell * ell + ell + m_signed


@dataclass(frozen=True)
class Direction:
    """A point on the unit sphere in colatitude/longitude.

    ``theta`` and ``phi`` may be scalars or equally shaped arrays. Use
    :meth:`normalized` to fold arbitrary angles into ``[0, pi] x [0, 2 pi)``.
    """

    theta: float | np.ndarray
    phi: float | np.ndarray

    def normalized(self) -> "Direction":
        theta = np.mod(np.asarray(self.theta, dtype=float), TWO_PI)
        phi = np.asarray(self.phi, dtype=float)
        flip = theta > math.pi
        theta = np.where(flip, TWO_PI - theta, theta)
        phi = np.mod(np.where(flip, phi + math.pi, phi), TWO_PI)
        # np.mod can return 2 pi for tiny negative inputs
        phi = np.where(phi >= TWO_PI, 0.0, phi)
        if theta.ndim == 0:
            return Direction(float(theta), float(phi))
        return Direction(theta, phi)

    def cartesian(self) -> np.ndarray:
        """Unit vector ``(sin t sin p, sin t cos p, cos t)``; last axis has size 3."""
        st = np.sin(self.theta)
        return np.stack(
            [st * np.sin(self.phi), st * np.cos(self.phi), np.cos(self.theta)],
            axis=-1,
        )

    @classmethod
    def from_cartesian(cls, xyz) -> "Direction":
        xyz = np.asarray(xyz, dtype=float)
        norm = np.linalg.norm(xyz, axis=-1)
        if np.any(norm == 0):
            raise DomainError("zero vector has no direction")
        z = np.clip(xyz[..., 2] / norm, -1.0, 1.0)
        theta = np.arccos(z)
        phi = np.mod(np.arctan2(xyz[..., 0], xyz[..., 1]), TWO_PI)
        if theta.ndim == 0:
            return cls(float(theta), float(phi))
        return cls(theta, phi)


def _check_unit_interval(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + DOMAIN_SLACK):
        raise DomainError("argument must satisfy |t| <= 1")
    return np.clip(t, -1.0, 1.0)


def legendre_p_all(L: int, t) -> np.ndarray:
    """Legendre polynomials ``P_0 .. P_L`` at ``t``; shape ``(L + 1, *t.shape)``."""
    if L < 0:
        raise DomainError("degree must be non-negative")
    t = _check_unit_interval(t)
    out = np.empty((L + 1,) + t.shape)
    out[0] = 1.0
    if L >= 1:
        out[1] = t
    for ell in range(2, L + 1):
        out[ell] = ((2 * ell - 1) * t * out[ell - 1] - (ell - 1) * out[ell - 2]) / ell
    return out


def legendre_p(ell: int, t):
    """Legendre polynomial ``P_ell(t)`` by the three-term recurrence."""
    values = legendre_p_all(ell, t)[ell]
    return float(values) if values.ndim == 0 else values


def _log_diagonal_factor(m: int) -> float:
    """log of prod_{k=1..m} sqrt((2k+1)/(2k))."""
    k = np.arange(1, m + 1, dtype=float)
    return 0.5 * float(np.sum(np.log1p(1.0 / (2.0 * k))))


def normalized_legendre(L: int, m: int, t, sin_theta=None) -> np.ndarray:
    """Fully normalized ``sqrt((2l+1)(l-m)!/(l+m)!) P_l^m(t)`` for ``l = m..L``.

    Returns an array of shape ``(L - m + 1, *t.shape)``. ``sin_theta`` may be
    supplied to avoid the cancellation in ``sqrt(1 - t^2)`` near the poles.

    The recurrence starts from the normalized diagonal ``l = m`` and runs
    upward in ``l``, so no factorial is ever formed.
    """
    if not 0 <= m <= L:
        raise DomainError("need 0 <= m <= L")
    t = _check_unit_interval(t)
    if sin_theta is None:
        s = np.sqrt(np.maximum(0.0, 1.0 - t * t))
    else:
        s = np.asarray(sin_theta, dtype=float)
        if np.any(s < 0):
            raise DomainError("sin_theta must be non-negative (colatitude in [0, pi])")
    out = np.empty((L - m + 1,) + t.shape)
    if m == 0:
        seed = np.ones_like(t)
    else:
        with np.errstate(divide="ignore"):
            log_seed = _log_diagonal_factor(m) + m * np.log(s)
        seed = np.where(log_seed > _LOG_SEED_FLOOR, np.exp(np.maximum(log_seed, _LOG_SEED_FLOOR)), 0.0)
    out[0] = seed
    if L > m:
        out[1] = math.sqrt(2 * m + 3) * t * seed
    m2 = m * m
    for ell in range(m + 2, L + 1):
        a = math.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - m2))
        b = math.sqrt(((ell - 1.0) ** 2 - m2) / (4.0 * (ell - 1.0) ** 2 - 1.0))
        out[ell - m] = a * (t * out[ell - m - 1] - b * out[ell - m - 2])
    return out


def assoc_legendre(ell: int, m: int, t, normalized: bool = False):
    """Associated Legendre function ``P_ell^m(t)`` without Condon-Shortley phase.

    With ``normalized=True`` the value is multiplied by
    ``sqrt((2 ell + 1)(ell - m)!/(ell + m)!)``, which stays of order one for
    any degree. The unnormalized value is recovered from it through
    log-gamma and overflows to ``inf`` only where the true value exceeds the
    double range.
    """
    if ell < 0 or not 0 <= m <= ell:
        raise DomainError("need 0 <= m <= ell")
    if m == 0 and not normalized:
        return legendre_p(ell, t)
    vals = normalized_legendre(ell, m, t)[-1]
    if not normalized:
        log_scale = 0.5 * (math.lgamma(ell + m + 1) - math.lgamma(ell - m + 1)) - 0.5 * math.log(2 * ell + 1)
        with np.errstate(over="ignore", divide="ignore"):
            vals = np.sign(vals) * np.exp(np.log(np.abs(vals)) + log_scale)
    return float(vals) if np.ndim(vals) == 0 else vals


def sph_harmonic(ell: int, m: int, direction: Direction):
    """Complex orthonormal spherical harmonic ``Y_ell,m`` at ``direction``."""
    if ell < 0 or abs(m) > ell:
        raise DomainError("need |m| <= ell")
    ma = abs(m)
    direction = direction.normalized()
    theta = np.asarray(direction.theta, dtype=float)
    phi = np.asarray(direction.phi, dtype=float)
    pbar = normalized_legendre(ell, ma, np.cos(theta), np.sin(theta))[-1]
    value = pbar * np.exp(1j * ma * phi)
    if m < 0:
        value = (-1) ** ma * np.conj(value)
    return complex(value) if value.ndim == 0 else value


def real_basis(ell: int, m_signed: int, direction: Direction):
    """Real orthonormal basis function in the ``m_signed`` encoding."""
    if ell < 0 or abs(m_signed) > ell:
        raise DomainError("need |m_signed| <= ell")
    m = abs(m_signed)
    direction = direction.normalized()
    theta = np.asarray(direction.theta, dtype=float)
    phi = np.asarray(direction.phi, dtype=float)
    pbar = normalized_legendre(ell, m, np.cos(theta), np.sin(theta))[-1]
    if m_signed == 0:
        value = pbar
    elif m_signed > 0:
        value = math.sqrt(2.0) * pbar * np.cos(m * phi)
    else:
        value = math.sqrt(2.0) * pbar * np.sin(m * phi)
    return float(value) if np.ndim(value) == 0 else value


def real_basis_matrix(L: int, theta, phi) -> np.ndarray:
    """All real basis functions up to degree ``L`` at the given points.

    Returns shape ``(n_points, (L + 1)**2)`` with columns in flat coefficient
    order. Intended for small ``L``; cost is ``O(n_points L^2)`` memory.
    """
    d = Direction(np.ravel(np.asarray(theta, dtype=float)), np.ravel(np.asarray(phi, dtype=float))).normalized()
    theta, phi = np.atleast_1d(d.theta), np.atleast_1d(d.phi)
    x, s = np.cos(theta), np.sin(theta)
    out = np.empty((theta.size, (L + 1) ** 2))
    root2 = math.sqrt(2.0)
    for m in range(L + 1):
        pbar = normalized_legendre(L, m, x, s)
        ells = np.arange(m, L + 1)
        if m == 0:
            out[:, coefficient_index(ells, 0)] = pbar.T
        else:
            out[:, coefficient_index(ells, m)] = root2 * pbar.T * np.cos(m * phi)[:, None]
            out[:, coefficient_index(ells, -m)] = root2 * pbar.T * np.sin(m * phi)[:, None]
    return out


def gauss_legendre(n: int, tol: float = 1e-15, max_iter: int = 100):
    """Gauss-Legendre nodes (descending) and weights on ``[-1, 1]``.

    Nodes are the roots of ``P_n`` found by Newton iteration from the
    Tricomi initial guesses; weights are ``2 / ((1 - x^2) P_n'(x)^2)``.
    """
    if n < 1:
        raise DomainError("need at least one node")
    i = np.arange(1, n + 1)
    x = np.cos(math.pi * (i - 0.25) / (n + 0.5))
    for _ in range(max_iter):
        p0, p1 = np.ones_like(x), x.copy()
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = n * (x * p1 - p0) / (x * x - 1.0)
        dx = p1 / dp
        x = x - dx
        if np.max(np.abs(dx)) < tol:
            break
    p0, p1 = np.ones_like(x), x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    return x, w


class GridKind(str, enum.Enum):
    GAUSS_LEGENDRE = "gauss-legendre"
    EQUAL_AREA = "equal-area"


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class IsoLatGrid:
    """Rings of equispaced longitudes with per-ring quadrature weights.

    ``ring_weights`` sum to one. Point ``(j, k)`` sits at colatitude
    ``ring_colatitudes[j]`` and longitude ``2 pi k / phis_per_ring[j]``, has
    weight ``ring_weights[j] / phis_per_ring[j]`` and flat index
    ``j * n_phi + k`` (ring-major).
    """

    ring_colatitudes: np.ndarray
    ring_weights: np.ndarray
    phis_per_ring: np.ndarray
    kind: GridKind
    _cos: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ring_colatitudes", _frozen(np.asarray(self.ring_colatitudes, float)))
        object.__setattr__(self, "ring_weights", _frozen(np.asarray(self.ring_weights, float)))
        object.__setattr__(self, "phis_per_ring", _frozen(np.asarray(self.phis_per_ring, int)))
        object.__setattr__(self, "kind", GridKind(self.kind))
        if len(set(self.phis_per_ring.tolist())) != 1:
            raise GridError("all rings must carry the same number of longitudes")
        object.__setattr__(self, "_cos", _frozen(np.cos(self.ring_colatitudes)))

    @property
    def n_rings(self) -> int:
        return int(self.ring_colatitudes.size)

    @property
    def n_phi(self) -> int:
        return int(self.phis_per_ring[0])

    @property
    def n_points(self) -> int:
        return self.n_rings * self.n_phi

    @property
    def cos_colatitudes(self) -> np.ndarray:
        return self._cos

    @property
    def longitudes(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_phi) / self.n_phi

    def points(self) -> Direction:
        """All grid points as a flat ring-major :class:`Direction`."""
        theta = np.repeat(self.ring_colatitudes, self.n_phi)
        phi = np.tile(self.longitudes, self.n_rings)
        return Direction(theta, phi)

    def point_weights(self) -> np.ndarray:
        return np.repeat(self.ring_weights / self.n_phi, self.n_phi)

    def flat_index(self, ring: int, k: int) -> int:
        return ring * self.n_phi + k

    def integrate(self, values) -> float:
        """Quadrature of flat point values against the normalized measure."""
        values = np.asarray(values, dtype=float).reshape(self.n_rings, self.n_phi)
        return float(self.ring_weights @ values.mean(axis=1))

    def is_exact_for(self, L: int) -> bool:
        """True when products of two band-``L`` fields integrate exactly."""
        return (
            self.kind is GridKind.GAUSS_LEGENDRE
            and self.n_rings >= L + 1
            and self.n_phi >= 2 * L + 1
        )


def make_grid(kind, n_rings: int, n_phi: int, max_points: int = MAX_GRID_POINTS) -> IsoLatGrid:
    """Build an iso-latitude grid.

    ``gauss-legendre`` puts rings at the Gauss-Legendre nodes in
    ``cos(theta)``; ``equal-area`` puts them at the midpoints of ``n_rings``
    equal bands in ``cos(theta)`` with equal weights.
    """
    kind = GridKind(kind)
    if n_rings < 1 or n_phi < 1:
        raise GridError("need n_rings >= 1 and n_phi >= 1")
    if n_rings * n_phi > max_points:
        raise GridError(f"grid of {n_rings * n_phi} points exceeds cap {max_points}")
    if kind is GridKind.GAUSS_LEGENDRE:
        x, w = gauss_legendre(n_rings)
        weights = w / 2.0
    else:
        x = 1.0 - (2.0 * np.arange(n_rings) + 1.0) / n_rings
        weights = np.full(n_rings, 1.0 / n_rings)
    theta = np.arccos(np.clip(x, -1.0, 1.0))
    return IsoLatGrid(theta, weights, np.full(n_rings, n_phi), kind)
