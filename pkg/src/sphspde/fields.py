"""Isotropic Gaussian random fields in the real orthonormal basis.

A field with angular power spectrum ``A_l`` has real-basis coefficients
that are independent ``N(0, A_l)``. This is the same law as complex
coefficients whose real and imaginary parts have variance ``A_l / 2``
(``A_0`` for the real monopole-like ``m = 0`` term).
"""

from __future__ import annotations

import enum
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DomainError, SpectrumFormatError
from .harmonics import coefficient_index, legendre_p_all
from .rng import draw_coefficient_normals

__all__ = [
    "CoefficientSet",
    "PowerSpectrum",
    "SpectrumKind",
    "covariance_zonal",
    "fbm_covariance_zonal",
    "power_law_spectrum",
    "read_spectrum",
    "sample_isotropic",
    "write_spectrum",
]


class SpectrumKind(str, enum.Enum):
    CL = "cl"
    DL = "dl"


def _dl_factor(ells: np.ndarray) -> np.ndarray:
    return ells * (ells + 1.0) / (2.0 * math.pi)


@dataclass(frozen=True)
class PowerSpectrum:
    """Non-negative per-degree values for ``l = 0..L_max``.

    ``kind`` says whether ``values`` are ``C_l`` or the scaled
    ``D_l = l (l + 1) C_l / (2 pi)``. The stored values are never
    rewritten: :meth:`cl` and :meth:`dl` return them unchanged for the
    native kind and derive the other one, and a converted spectrum keeps a
    reference to its source so converting back is lossless.
    """

    values: np.ndarray
    kind: SpectrumKind = SpectrumKind.CL
    _source: "PowerSpectrum | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise DomainError("spectrum must be a non-empty 1-D sequence")
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise DomainError("spectrum values must be finite and >= 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", SpectrumKind(self.kind))

    @property
    def lmax(self) -> int:
        return self.values.size - 1

    @property
    def ells(self) -> np.ndarray:
        return np.arange(self.values.size, dtype=float)

    @property
    def cl(self) -> np.ndarray:
        if self.kind is SpectrumKind.CL:
            return self.values
        if self._source is not None and self._source.kind is SpectrumKind.CL:
            return self._source.values
        out = np.zeros_like(self.values)
        out[1:] = self.values[1:] / _dl_factor(self.ells[1:])
        return out

    @property
    def dl(self) -> np.ndarray:
        if self.kind is SpectrumKind.DL:
            return self.values
        if self._source is not None and self._source.kind is SpectrumKind.DL:
            return self._source.values
        return self.values * _dl_factor(self.ells)

    def converted(self, kind) -> "PowerSpectrum":
        """The same spectrum expressed as ``kind``."""
        kind = SpectrumKind(kind)
        if kind is self.kind:
            return self
        if kind is SpectrumKind.CL and self.values[0] > 0:
            warnings.warn("D_l form cannot carry the l = 0 term; C_0 set to 0", stacklevel=2)
        vals = self.cl if kind is SpectrumKind.CL else self.dl
        return PowerSpectrum(vals, kind, _source=self)

    def truncated(self, L: int) -> "PowerSpectrum":
        if L > self.lmax:
            raise DomainError(f"spectrum stops at l = {self.lmax}, need {L}")
        return PowerSpectrum(self.values[: L + 1], self.kind)

    def scaled(self, factor: float) -> "PowerSpectrum":
        return PowerSpectrum(self.values * factor, self.kind)

    def summability(self, L: int | None = None) -> float:
        """``sum_{l <= L} (2l + 1) C_l`` (the field's mean squared norm)."""
        cl = self.cl if L is None else self.cl[: L + 1]
        return float(np.sum((2.0 * np.arange(cl.size) + 1.0) * cl))

    def tail(self, L: int) -> float:
        """``sum_{L < l <= L_max} (2l + 1) C_l``; the truncation loss over the stored band."""
        return self.summability() - self.summability(L)

    def argmax(self, lmin: int = 2) -> int:
        """Degree of the largest ``D_l`` at or above ``lmin``."""
        return int(lmin + np.argmax(self.dl[lmin:]))


def power_law_spectrum(L: int, exponent: float, scale: float = 1.0) -> PowerSpectrum:
    """``C_l = scale * (1 + l)^(-exponent)`` for ``l = 0..L``."""
    return PowerSpectrum(scale * (1.0 + np.arange(L + 1.0)) ** (-exponent))


def read_spectrum(source, kind="cl") -> PowerSpectrum:
    """Parse whitespace-separated ``l value`` rows; ``#`` starts a comment.

    Extra columns (error bars, other spectra) are ignored. Missing degrees
    are filled with zero. A D-form file has no monopole, so its ``C_0`` is 0.
    """
    kind = SpectrumKind(kind)
    # a Path or a single-line string names a file; multi-line strings are data
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    rows = []
    for lineno, raw in enumerate(io.StringIO(text), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise SpectrumFormatError(f"line {lineno}: expected 'ell value'")
        try:
            ell_f, val = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise SpectrumFormatError(f"line {lineno}: {exc}") from None
        if ell_f < 0 or ell_f != int(ell_f):
            raise SpectrumFormatError(f"line {lineno}: degree must be a non-negative integer")
        if not math.isfinite(val) or val < 0:
            raise SpectrumFormatError(f"line {lineno}: value must be finite and >= 0")
        rows.append((int(ell_f), val))
    if not rows:
        raise SpectrumFormatError("no data rows")
    ells = [r[0] for r in rows]
    if len(set(ells)) != len(ells):
        raise SpectrumFormatError("duplicate degrees")
    values = np.zeros(max(ells) + 1)
    for ell, val in rows:
        values[ell] = val
    if kind is SpectrumKind.DL and values[0] != 0:
        warnings.warn("D_l file has a nonzero l = 0 entry; it cannot be represented and is dropped", stacklevel=2)
        values[0] = 0.0
    return PowerSpectrum(values, kind)


def write_spectrum(spectrum: PowerSpectrum, path, kind=None) -> None:
    kind = spectrum.kind if kind is None else SpectrumKind(kind)
    vals = spectrum.cl if kind is SpectrumKind.CL else spectrum.dl
    lines = [f"# ell {kind.value}"]
    lines += [f"{ell} {v!r}" for ell, v in enumerate(vals.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class CoefficientSet:
    """Real-basis coefficients of a band-limited field at one time.

    ``coeffs`` is flat with entry ``l*l + l + m_signed``.
    """

    L: int
    coeffs: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=float)
        if arr.shape != ((self.L + 1) ** 2,):
            raise DomainError(f"expected {(self.L + 1) ** 2} coefficients, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zeros(cls, L: int, time_tag: float = 0.0) -> "CoefficientSet":
        return cls(L, np.zeros((L + 1) ** 2), time_tag)

    @classmethod
    def delta(cls, L: int, ell: int, m_signed: int) -> "CoefficientSet":
        c = np.zeros((L + 1) ** 2)
        c[coefficient_index(ell, m_signed)] = 1.0
        return cls(L, c)

    def degree(self, ell: int) -> np.ndarray:
        """Coefficients of degree ``ell`` ordered ``m_signed = -ell..ell``."""
        return self.coeffs[ell * ell : (ell + 1) ** 2]

    def get(self, ell: int, m_signed: int) -> float:
        return float(self.coeffs[coefficient_index(ell, m_signed)])

    def squared_norm(self) -> float:
        return float(np.dot(self.coeffs, self.coeffs))

    def degree_power(self) -> np.ndarray:
        """``sum_m c_lm^2`` per degree."""
        return degree_sums(self.coeffs ** 2, self.L)

    def truncated(self, L: int) -> "CoefficientSet":
        if L > self.L:
            raise DomainError("cannot raise the band limit by truncation")
        return CoefficientSet(L, self.coeffs[: (L + 1) ** 2], self.time_tag)

    def with_time(self, time_tag: float) -> "CoefficientSet":
        return CoefficientSet(self.L, self.coeffs, time_tag)


def degree_of_index(L: int) -> np.ndarray:
    """Degree ``l`` of every flat coefficient position up to band ``L``."""
    return np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)


def degree_sums(values: np.ndarray, L: int) -> np.ndarray:
    """Sum flat per-coefficient values (last axis) within each degree."""
    starts = np.arange(L + 1) ** 2
    return np.add.reduceat(values, starts, axis=-1)


def sample_isotropic(spectrum: PowerSpectrum, L: int, rng) -> CoefficientSet:
    """Draw an isotropic Gaussian field band-limited at ``L``.

    ``rng`` is a :class:`~sphspde.rng.CoefficientStream` (reproducible per
    degree) or a numpy ``Generator``.
    """
    if L > spectrum.lmax:
        raise DomainError(f"spectrum stops at l = {spectrum.lmax}, need {L}")
    sd = np.sqrt(spectrum.cl[: L + 1])[degree_of_index(L)]
    return CoefficientSet(L, sd * draw_coefficient_normals(rng, L))


def covariance_zonal(spectrum: PowerSpectrum, cos_angle):
    """``sum_l C_l (2l + 1) P_l(cos_angle)`` over the stored band."""
    cl = spectrum.cl
    P = legendre_p_all(cl.size - 1, cos_angle)
    weights = cl * (2.0 * np.arange(cl.size) + 1.0)
    value = np.tensordot(weights, P, axes=(0, 0))
    return float(value) if np.ndim(value) == 0 else value


def fbm_covariance_zonal(spectrum: PowerSpectrum, t: float, hurst: float, cos_angle):
    """Covariance ``E[B(t, x) B(t, y)] = t^(2H) sum_l (2l + 1) A_l P_l(x . y)``."""
    if t < 0:
        raise DomainError("time must be non-negative")
    return t ** (2.0 * hurst) * covariance_zonal(spectrum, cos_angle)
