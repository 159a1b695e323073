"""Spectrum of the fractional diffusion operator and stochastic-integral variances.

The operator ``psi(-Delta) = (-Delta)^(alpha/2) (I - Delta)^(gamma/2)`` acts on
degree ``l`` harmonics by ``psi(lambda_l)`` with ``lambda_l = l (l + 1)``.
The variance of ``int_0^t exp(-psi (t - u)) dbeta^H(u)`` for a unit fBm
``beta^H`` is ``sigma_sq``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import DomainError, NonConvergenceError

__all__ = [
    "FractionalParams",
    "eigenvalue_lambda",
    "psi_eigenvalue",
    "scaled_incomplete_gamma",
    "sigma",
    "sigma_increment_bound",
    "sigma_sq",
]

SERIES_SWITCH = 30.0
QUAD_TOL = 1e-12
# Beyond this many e-folds the exponential tail is below 1e-26 of the total.
_TAIL_CUT = 60.0


@dataclass(frozen=True)
class FractionalParams:
    """Exponents ``(alpha, gamma)`` of the operator and the Hurst index.

    Strict mode enforces ``alpha >= 0``, ``gamma > 0`` and
    ``1/2 <= hurst < 1``. ``extended=True`` additionally admits
    ``gamma <= 0`` (e.g. ``(alpha, gamma) = (2, -2)``); the eigenvalues stay
    finite and non-negative but the convergence theorems no longer apply.
    """

    alpha: float
    gamma: float
    hurst: float
    extended: bool = False

    def __post_init__(self):
        for name in ("alpha", "gamma", "hurst"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.alpha < 0:
            raise DomainError("alpha must be >= 0")
        if not 0.5 <= self.hurst < 1.0:
            raise DomainError("hurst must lie in [1/2, 1)")
        if self.gamma <= 0 and not self.extended:
            raise DomainError("gamma must be > 0 (pass extended=True to allow gamma <= 0)")
        if self.extended and self.gamma <= 0:
            warnings.warn(
                "extended mode: gamma <= 0 lies outside the range covered by the "
                "convergence results",
                stacklevel=3,
            )


def eigenvalue_lambda(ell):
    """Eigenvalue ``l (l + 1)`` of ``-Delta`` on degree ``l`` harmonics."""
    if np.any(np.asarray(ell) < 0):
        raise DomainError("degree must be non-negative")
    if np.ndim(ell) == 0:
        ell = int(ell)
        return float(ell * (ell + 1))
    ell = np.asarray(ell, dtype=np.int64)
    return (ell * (ell + 1)).astype(float)


def psi_eigenvalue(ell, params: FractionalParams):
    """``psi(lambda_l) = lambda_l^(alpha/2) (1 + lambda_l)^(gamma/2)``.

    Uses ``0**0 == 1`` so that ``alpha == 0`` gives ``psi(0) = 1``.
    """
    lam = np.asarray(eigenvalue_lambda(ell), dtype=float)
    value = np.power(lam, params.alpha / 2.0) * np.power(1.0 + lam, params.gamma / 2.0)
    if not np.all(np.isfinite(value)):
        raise DomainError("psi is not finite for these parameters")
    return float(value) if value.ndim == 0 else value


# ---------------------------------------------------------------------------
# Moment integrals of u^(a-1) against exponentials on [0, 1]


def _decaying_series(a: float, z: float) -> float:
    """int_0^1 u^(a-1) e^(-z u) du = e^(-z) sum_k z^k / (a (a+1) ... (a+k)).

    All terms are positive for ``z >= 0``.
    """
    term = 1.0 / a
    total = term
    k = 0
    while True:
        k += 1
        term *= z / (a + k)
        total += term
        if term < 1e-17 * total:
            break
        if k > 10_000:
            raise NonConvergenceError("series did not converge")
    return math.exp(-z) * total


def _growing_series(a: float, w: float) -> float:
    """int_0^1 u^(a-1) e^(-w (1-u)) du = e^(-w) sum_k w^k / (k! (a+k))."""
    term = 1.0  # w^k / k!
    total = 1.0 / a
    k = 0
    while True:
        k += 1
        term *= w / k
        inc = term / (a + k)
        total += inc
        if inc < 1e-17 * total and k > w:
            break
        if k > 10_000:
            raise NonConvergenceError("series did not converge")
    return math.exp(-w) * total


def _checked_quad(f, lo, hi, **kw) -> float:
    value, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400, **kw)
    if not math.isfinite(value) or err > QUAD_TOL * abs(value):
        raise NonConvergenceError(f"quadrature error {err:.3g} exceeds tolerance")
    return value


def _decaying_quad(a: float, z: float) -> float:
    # substitute s = z u: z^(-a) int_0^z s^(a-1) e^(-s) ds
    hi = min(z, a + _TAIL_CUT + 10.0 * math.sqrt(a))
    val = _checked_quad(lambda s: math.exp(-s), 0.0, hi, weight="alg", wvar=(a - 1.0, 0.0))
    return math.exp(-a * math.log(z)) * val


def _growing_quad(a: float, w: float) -> float:
    # substitute s = w (1 - u): w^(-1) int_0^w e^(-s) (1 - s/w)^(a-1) ds
    if w <= _TAIL_CUT:
        val = _checked_quad(
            lambda s: math.exp(-s), 0.0, w, weight="alg", wvar=(0.0, a - 1.0)
        ) * w ** (1.0 - a)
    else:
        val = _checked_quad(lambda s: math.exp(-s) * (1.0 - s / w) ** (a - 1.0), 0.0, _TAIL_CUT)
    return val / w


def _decaying_moment(a: float, z: float, method: str = "auto") -> float:
    if z == 0.0:
        return 1.0 / a
    if method == "series" or (method == "auto" and z <= SERIES_SWITCH):
        return _decaying_series(a, z)
    return _decaying_quad(a, z)


def _growing_moment(a: float, w: float, method: str = "auto") -> float:
    if w == 0.0:
        return 1.0 / a
    if method == "series" or (method == "auto" and w <= SERIES_SWITCH):
        return _growing_series(a, w)
    return _growing_quad(a, w)


def scaled_incomplete_gamma(a: float, z: float, method: str = "auto") -> float:
    """``(1/Gamma(a)) int_0^1 t^(a-1) exp(-z t) dt`` for real ``z``.

    For ``|z| <= 30`` a series is summed whose terms are all positive (the
    Kummer-transformed series for ``z > 0``, the direct one for ``z < 0``).
    For larger ``|z|`` the integral is evaluated by adaptive quadrature with
    the algebraic endpoint weight. ``method`` forces ``"series"`` or
    ``"quadrature"``. Large negative ``z`` overflows to ``inf``.
    """
    if not a > 0:
        raise DomainError("need a > 0")
    if method not in ("auto", "series", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    z = float(z)
    if z >= 0:
        return _decaying_moment(a, z, method) / math.gamma(a)
    w = -z
    with np.errstate(over="ignore"):
        scale = np.exp(w)
    return float(scale * _growing_moment(a, w, method) / math.gamma(a))


# ---------------------------------------------------------------------------
# Variances


def _sigma_sq_scalar(psi: float, t: float, hurst: float) -> float:
    if t == 0.0:
        return 0.0
    z = psi * t
    if hurst == 0.5:
        if psi == 0.0:
            return t
        return -math.expm1(-2.0 * z) / (2.0 * psi)
    a = 2.0 * hurst
    # e^(-2z) Gamma(a) gamma*(a, -z) == e^(-z) * growing moment; no overflow
    near = math.exp(-z) * _growing_moment(a, z)
    far = _decaying_moment(a, z)
    return hurst * t**a * (near + far)


def sigma_sq(ell, t, params: FractionalParams):
    """Variance of the fractional stochastic integral of degree ``ell`` at time ``t``.

    For ``H = 1/2`` this is ``t`` when ``psi = 0`` and
    ``(1 - exp(-2 psi t)) / (2 psi)`` otherwise. For ``H > 1/2`` it is
    ``H t^(2H) (int_0^1 e^(-psi t (2-u)) u^(2H-1) du + int_0^1 e^(-psi t u) u^(2H-1) du)``,
    which equals the incomplete-gamma form without forming the product of
    an underflowing and an overflowing factor.

    ``ell`` and ``t`` broadcast against each other.
    """
    if np.any(np.asarray(t) < 0):
        raise DomainError("time must be non-negative")
    psi = np.asarray(psi_eigenvalue(ell, params), dtype=float)
    t_arr = np.asarray(t, dtype=float)
    psi_b, t_b = np.broadcast_arrays(psi, t_arr)
    out = np.empty(psi_b.shape)
    cache: dict[tuple[float, float], float] = {}
    for idx in np.ndindex(psi_b.shape):
        key = (float(psi_b[idx]), float(t_b[idx]))
        if key not in cache:
            cache[key] = _sigma_sq_scalar(key[0], key[1], params.hurst)
        out[idx] = cache[key]
    return float(out) if out.ndim == 0 else out


def sigma(ell, t, params: FractionalParams):
    """Standard deviation ``sqrt(sigma_sq)``."""
    return np.sqrt(sigma_sq(ell, t, params))


def sigma_increment_bound(ell, t, h, params: FractionalParams, constant: float | None = None):
    """Upper bound on ``|sigma_{l,t+h} - sigma_{l,t}|``.

    Brownian case (``H = 1/2``): ``h^(1/2)`` at ``t = 0``; otherwise
    ``C1 h`` with ``C1 = 1/(2 sqrt t)`` if ``psi = 0`` and
    ``C1 = sqrt(psi / (2 (1 - e^(-2 psi t)))) e^(-2 psi t)`` if ``psi > 0``.
    ``constant`` is ignored here; these constants are explicit.

    Fractional case (``H > 1/2``): ``C (1 + psi t^H h^(1-H)) h^H``. Since
    ``sigma_{l,h} <= h^H`` and ``sigma_{l,t} <= t^H``, ``C = 1`` is a valid
    default; pass ``constant`` to override it.
    """
    if h <= 0:
        raise DomainError("need h > 0")
    if t < 0:
        raise DomainError("time must be non-negative")
    psi = float(psi_eigenvalue(ell, params))
    H = params.hurst
    if H == 0.5:
        if t == 0:
            return math.sqrt(h)
        if psi == 0.0:
            return h / (2.0 * math.sqrt(t))
        c1 = math.sqrt(psi / (-2.0 * math.expm1(-2.0 * psi * t))) * math.exp(-2.0 * psi * t)
        return c1 * h
    c = 1.0 if constant is None else float(constant)
    return c * (1.0 + psi * t**H * h ** (1.0 - H)) * h**H
