"""Ensemble studies: truncation error in degree, increments in time, spectra.

Realization ``n`` of every study draws its initial field from stream
``("init", n)`` and its noise from ``("noise", n)``, so results do not depend
on the number of worker threads, and studies with different band limits
share their low-degree draws.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, DomainError
from .fields import CoefficientSet, PowerSpectrum, degree_of_index, degree_sums, sample_isotropic
from .harmonics import GridKind, make_grid
from .operator import FractionalParams, psi_eigenvalue, sigma
from .rng import StreamFactory
from .solver import SphericalTransform, sample_solution

__all__ = [
    "EnsembleStats",
    "IncrementConfig",
    "RateFit",
    "TruncationConfig",
    "estimate_power_spectrum",
    "fit_loglog_rate",
    "increment_study",
    "truncation_study",
    "write_manifest",
    "write_spectrum_csv",
    "write_study_csv",
]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    rms_residual: float

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "rms_residual": self.rms_residual}


def fit_loglog_rate(xs, ys) -> RateFit:
    """Least-squares line through ``(log x, log y)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise DomainError("need two equally long 1-D sequences of length >= 2")
    if np.any(xs <= 0) or np.any(ys <= 0) or not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise DomainError("log-log fit needs finite positive values")
    lx, ly = np.log(xs), np.log(ys)
    if np.ptp(lx) == 0:
        raise DomainError("abscissae must not all coincide")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2))))


@dataclass
class EnsembleStats:
    """Per-abscissa mean squared quantities over an ensemble.

    ``xs`` are band limits or time increments, ``samples[n, i]`` is the
    squared L2 quantity of realization ``n`` at ``xs[i]``.
    """

    xs: np.ndarray
    samples: np.ndarray
    fit: RateFit | None
    fit_window: tuple
    per_degree_power: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_realizations(self) -> int:
        return int(self.samples.shape[0])

    @property
    def mean_sq(self) -> np.ndarray:
        # compensated column sums keep the reduction exact to rounding
        return np.array([math.fsum(col) for col in self.samples.T]) / self.n_realizations

    @property
    def stderr(self) -> np.ndarray:
        if self.n_realizations < 2:
            return np.full(self.xs.shape, np.nan)
        return self.samples.std(axis=0, ddof=1) / math.sqrt(self.n_realizations)

    @property
    def rms(self) -> np.ndarray:
        return np.sqrt(self.mean_sq)

    @property
    def fitted_rate(self) -> float:
        return float("nan") if self.fit is None else self.fit.slope


def _window_mask(xs: np.ndarray, window) -> np.ndarray:
    lo, hi = (None, None) if window is None else window
    mask = np.ones(xs.shape, dtype=bool)
    if lo is not None:
        mask &= xs >= lo * (1 - 1e-12)
    if hi is not None:
        mask &= xs <= hi * (1 + 1e-12)
    return mask


def _fit_rms(xs, mean_sq, window):
    mask = _window_mask(xs, window) & (mean_sq > 0)
    if mask.sum() < 2:
        return None
    return fit_loglog_rate(xs[mask], np.sqrt(mean_sq[mask]))


def _map_realizations(fn, N: int, threads: int):
    if threads <= 1:
        return [fn(n) for n in range(N)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(N)))


def _check_spectra(L: int, *spectra: PowerSpectrum):
    for s in spectra:
        if s.lmax < L:
            raise ConfigError(f"spectrum stops at l = {s.lmax}, study needs {L}")


# ---------------------------------------------------------------------------
# Truncation in degree


@dataclass(frozen=True)
class TruncationConfig:
    params: FractionalParams
    init_spectrum: PowerSpectrum
    noise_spectrum: PowerSpectrum
    L0: int = 256
    L_list: Sequence[int] = (8, 16, 32, 64, 128)
    t: float = 1e-5
    t0: float = 1e-5
    N: int = 50
    seed: int = 0
    evaluation: str = "coefficient"
    grid_kind: str = "gauss-legendre"
    n_rings: int | None = None
    n_phi: int | None = None
    fit_window: tuple = (None, None)
    threads: int = 1

    def validate(self):
        if self.N < 2:
            raise ConfigError("need N >= 2 realizations")
        if not self.L_list:
            raise ConfigError("L_list is empty")
        if any(L < 0 or L >= self.L0 for L in self.L_list):
            raise ConfigError("every L must satisfy 0 <= L < L0")
        if self.t < 0 or self.t0 < 0:
            raise ConfigError("t and t0 must be non-negative")
        if self.evaluation not in ("coefficient", "grid", "both"):
            raise ConfigError(f"unknown evaluation mode {self.evaluation!r}")
        _check_spectra(self.L0, self.init_spectrum, self.noise_spectrum)

    def grid(self):
        R = self.n_rings if self.n_rings is not None else self.L0 + 4
        K = self.n_phi if self.n_phi is not None else 2 * R
        return make_grid(GridKind(self.grid_kind), R, K)


def solution_coefficients(factory: StreamFactory, n: int, L: int, t: float, t0: float,
                          params: FractionalParams, init: PowerSpectrum,
                          noise: PowerSpectrum) -> CoefficientSet:
    """Realization ``n`` of the band-``L`` solution at time ``t``."""
    c0 = sample_isotropic(init, L, factory.stream("init", n))
    return sample_solution(c0, t, t0, params, noise, factory.stream("noise", n)).coeffs


def truncation_study(cfg: TruncationConfig) -> EnsembleStats:
    """Coupled truncation errors ``E ||X_L(t) - X_L0(t)||^2`` for each ``L``.

    ``X_L`` is the degree-``L`` truncation of the same realization as the
    reference ``X_L0``, so the squared error is the coefficient tail sum.
    With ``evaluation="grid"`` the error is instead integrated on a grid,
    and ``"both"`` records the largest discrepancy between the two paths.
    """
    cfg.validate()
    Ls = np.array(sorted(cfg.L_list))
    factory = StreamFactory(cfg.seed)
    use_grid = cfg.evaluation in ("grid", "both")
    transform = SphericalTransform(cfg.grid(), cfg.L0) if use_grid else None

    def one(n):
        c = solution_coefficients(factory, n, cfg.L0, cfg.t, cfg.t0, cfg.params,
                                  cfg.init_spectrum, cfg.noise_spectrum).coeffs
        power = degree_sums(c ** 2, cfg.L0)
        coef_err = np.array([math.fsum(power[L + 1:]) for L in Ls])
        grid_err = None
        if use_grid:
            grid_err = np.empty(Ls.size)
            for i, L in enumerate(Ls):
                d = c.copy()
                d[: (L + 1) ** 2] = 0.0
                vals = transform.synthesize_fft(CoefficientSet(cfg.L0, d))
                grid_err[i] = transform.grid.integrate(vals ** 2)
        return coef_err, grid_err, power

    results = _map_realizations(one, cfg.N, cfg.threads)
    coef = np.array([r[0] for r in results])
    power = np.array([r[2] for r in results])
    samples = coef
    diagnostics: dict = {}
    if use_grid:
        grid = np.array([r[1] for r in results])
        diagnostics["max_abs_path_discrepancy"] = float(np.max(np.abs(grid - coef)))
        diagnostics["grid_exact"] = bool(transform.grid.is_exact_for(cfg.L0))
        if cfg.evaluation == "grid":
            samples = grid
    per_degree = np.sum(power, axis=0) / (cfg.N * (2.0 * np.arange(cfg.L0 + 1) + 1.0))
    stats = EnsembleStats(Ls.astype(float), samples, None, tuple(cfg.fit_window), per_degree, diagnostics)
    stats.fit = _fit_rms(stats.xs, stats.mean_sq, cfg.fit_window)
    return stats


# ---------------------------------------------------------------------------
# Increments in time


@dataclass(frozen=True)
class IncrementConfig:
    params: FractionalParams
    init_spectrum: PowerSpectrum
    noise_spectrum: PowerSpectrum
    L: int = 256
    t: float = 1e-5
    t0: float = 1e-5
    h_list: Sequence[float] = tuple(np.logspace(-7, -1, 13).tolist())
    N: int = 100
    seed: int = 0
    construction: str = "shared"
    fit_window: tuple | str = "auto"
    threads: int = 1

    def validate(self):
        if self.N < 2:
            raise ConfigError("need N >= 2 realizations")
        if not self.h_list or any(not h > 0 for h in self.h_list):
            raise ConfigError("h_list must hold positive increments")
        if self.t < 0 or self.t0 < 0:
            raise ConfigError("t and t0 must be non-negative")
        if self.construction not in ("shared", "innovation"):
            raise ConfigError(f"unknown construction {self.construction!r}")
        _check_spectra(self.L, self.init_spectrum, self.noise_spectrum)

    def resolved_window(self) -> tuple:
        """``"auto"`` fits ``h <= t`` in the Brownian case with ``t > 0`` and everything otherwise."""
        if self.fit_window != "auto":
            return tuple(self.fit_window)
        if self.params.hurst == 0.5 and self.t > 0:
            return (None, self.t)
        return (None, None)


def increment_study(cfg: IncrementConfig) -> EnsembleStats:
    """Mean squared increments ``E ||X(t + h) - X(t)||^2`` in coefficient space.

    ``construction="shared"`` writes both times as
    ``X(s) = exp(-psi s) X(0) + sqrt(A) sigma_s U`` with one ``U``, giving the
    increment ``(e^{-psi(t+h)} - e^{-psi t}) X(0) + sqrt(A) (sigma_{t+h} - sigma_t) U``.
    ``construction="innovation"`` uses the one-step update
    ``(e^{-psi h} - 1) X(t) + sqrt(A) sigma_h Z`` with ``Z`` independent of ``X(t)``.
    """
    cfg.validate()
    hs = np.array(sorted(cfg.h_list), dtype=float)
    L, p = cfg.L, cfg.params
    ells = np.arange(L + 1)
    psi = np.asarray(psi_eigenvalue(ells, p), dtype=float)
    sqrt_a = np.sqrt(cfg.noise_spectrum.cl[: L + 1])
    spread = degree_of_index(L)
    sig_t = np.atleast_1d(sigma(ells, cfg.t, p))
    if cfg.construction == "shared":
        drift = np.array([np.exp(-psi * (cfg.t + h)) - np.exp(-psi * cfg.t) for h in hs])
        noise = np.array([sqrt_a * (np.atleast_1d(sigma(ells, cfg.t + h, p)) - sig_t) for h in hs])
    else:
        drift = np.array([np.expm1(-psi * h) for h in hs])
        noise = np.array([sqrt_a * np.atleast_1d(sigma(ells, h, p)) for h in hs])
    drift, noise = drift[:, spread], noise[:, spread]
    pre = np.exp(-psi * cfg.t0)[spread]
    x_t_decay = np.exp(-psi * cfg.t)[spread]
    factory = StreamFactory(cfg.seed)

    def one(n):
        x0 = pre * sample_isotropic(cfg.init_spectrum, L, factory.stream("init", n)).coeffs
        u = factory.stream("noise", n).standard_normal(L)
        if cfg.construction == "shared":
            delta = drift * x0 + noise * u
        else:
            x_t = x_t_decay * x0 + (sqrt_a * sig_t)[spread] * u
            z = np.array([factory.stream("increment", n, i).standard_normal(L) for i in range(hs.size)])
            delta = drift * x_t + noise * z
        return np.array([math.fsum(row) for row in delta ** 2])

    samples = np.array(_map_realizations(one, cfg.N, cfg.threads))
    window = cfg.resolved_window()
    stats = EnsembleStats(hs, samples, None, window)
    stats.fit = _fit_rms(hs, stats.mean_sq, window)
    stats.diagnostics["construction"] = cfg.construction
    return stats


# ---------------------------------------------------------------------------
# Spectra and output


def estimate_power_spectrum(ensemble) -> PowerSpectrum:
    """``A_hat_l = sum_n sum_m c_lm^2 / (N (2l + 1))`` over an ensemble.

    ``ensemble`` is a non-empty sequence of equally banded
    :class:`CoefficientSet` or an array of shape ``(N, (L + 1)**2)``.
    """
    if isinstance(ensemble, np.ndarray):
        arr = np.atleast_2d(ensemble)
    else:
        ensemble = list(ensemble)
        if not ensemble:
            raise DomainError("empty ensemble")
        Ls = {c.L for c in ensemble}
        if len(Ls) != 1:
            raise DomainError("ensemble members have different band limits")
        arr = np.array([c.coeffs for c in ensemble])
    if arr.shape[0] == 0:
        raise DomainError("empty ensemble")
    L = int(round(math.sqrt(arr.shape[1]))) - 1
    if (L + 1) ** 2 != arr.shape[1]:
        raise DomainError("coefficient arrays must have (L + 1)^2 entries")
    power = degree_sums(arr ** 2, L)
    totals = np.array([math.fsum(col) for col in power.T])
    return PowerSpectrum(totals / (arr.shape[0] * (2.0 * np.arange(L + 1) + 1.0)))


def _fmt(x) -> str:
    return repr(float(x))


def write_study_csv(stats: EnsembleStats, path, x_name: str, y_name: str) -> None:
    """Columns ``x_name,y_name,stderr``; ``L`` abscissae are written as integers."""
    mean, err = stats.mean_sq, stats.stderr
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([x_name, y_name, "stderr"])
        for x, m, e in zip(stats.xs.tolist(), mean.tolist(), err.tolist()):
            xs = str(int(x)) if x_name == "L" else _fmt(x)
            w.writerow([xs, _fmt(m), _fmt(e)])


def write_spectrum_csv(spectrum: PowerSpectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ell", "A_hat"])
        for ell, v in enumerate(spectrum.cl.tolist()):
            w.writerow([ell, _fmt(v)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_manifest(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
