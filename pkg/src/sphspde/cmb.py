"""Phenomenological evolution of a CMB-like angular power spectrum.

Conformal time increments ``d_eta = eta - eta_star`` after recombination
are mapped onto the diffusion time of the normalized equation by
``t = d_eta / t_s``. The scale ``t_s`` is calibrated at one degree so that
the power decays as ``(eta1 / eta2)^4`` between two conformal times, the
radiation-era law for the spectrum (the amplitude decays as the square).
Conformal times are in units where the present time is 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DomainError
from .fields import PowerSpectrum, SpectrumKind, degree_sums, read_spectrum, sample_isotropic
from .harmonics import IsoLatGrid
from .operator import FractionalParams, psi_eigenvalue
from .rng import StreamFactory
from .solver import GridField, SphericalTransform, sample_solution

__all__ = [
    "CmbResult",
    "ConformalTimes",
    "DEFAULT_PARAMS",
    "DEFAULT_T0",
    "ETA_STAR",
    "calibrate_time_scale",
    "evolve_cmb",
    "expected_amplitude_ratio",
    "expected_decay_ratio",
    "synthetic_hump_spectrum",
]

ETA_STAR = 2.735e-5
DEFAULT_PARAMS = FractionalParams(0.5, 0.5, 0.9)
DEFAULT_T0 = 1e-7


@dataclass(frozen=True)
class ConformalTimes:
    eta_star: float = ETA_STAR
    eta1: float = 1.001 * ETA_STAR
    eta2: float = 1.1 * ETA_STAR

    def __post_init__(self):
        if not self.eta_star > 0:
            raise DomainError("eta_star must be positive")
        if self.eta1 < self.eta_star:
            raise DomainError("eta1 must not precede eta_star")
        if not self.eta2 > self.eta1:
            raise DomainError("need eta2 > eta1")

    @property
    def delta1(self) -> float:
        return self.eta1 - self.eta_star

    @property
    def delta2(self) -> float:
        return self.eta2 - self.eta_star


def calibrate_time_scale(ell_ref: int, times: ConformalTimes, params: FractionalParams) -> float:
    """``t_s = (eta2 - eta1) psi_l / (2 log(eta2 / eta1))`` at degree ``ell_ref``."""
    if ell_ref < 1:
        raise DomainError("reference degree must be >= 1")
    d = times.eta2 - times.eta1
    if not d > 0:
        raise DomainError("need eta2 > eta1")
    psi = float(psi_eigenvalue(ell_ref, params))
    return d * psi / (2.0 * math.log1p(d / times.eta1))


def expected_decay_ratio(ell, delta_eta1: float, delta_eta2: float, t_s: float,
                         params: FractionalParams):
    """Noiseless power ratio ``exp(-2 psi_l (d_eta2 - d_eta1) / t_s)``."""
    if not t_s > 0:
        raise DomainError("t_s must be positive")
    psi = np.asarray(psi_eigenvalue(ell, params), dtype=float)
    out = np.exp(-2.0 * psi * (delta_eta2 - delta_eta1) / t_s)
    return float(out) if out.ndim == 0 else out


def expected_amplitude_ratio(ell, delta_eta1: float, delta_eta2: float, t_s: float,
                             params: FractionalParams):
    """Square root of :func:`expected_decay_ratio` (ratio of field amplitudes)."""
    return np.sqrt(expected_decay_ratio(ell, delta_eta1, delta_eta2, t_s, params))


def synthetic_hump_spectrum(L: int = 300, peak: int = 219, width: float = 15.0,
                            amplitude: float = 5000.0, floor: float = 500.0) -> PowerSpectrum:
    """``D_l = floor + amplitude exp(-(l - peak)^2 / (2 width^2))`` for ``l >= 2``.

    Degrees 0 and 1 carry no power. A narrow hump keeps its maximum within a
    degree of ``peak`` under the decay tilt of the calibrated model.
    """
    if not 2 <= peak <= L:
        raise DomainError("peak must lie in [2, L]")
    if width <= 0 or amplitude < 0 or floor < 0:
        raise DomainError("need width > 0 and non-negative amplitude and floor")
    ells = np.arange(L + 1, dtype=float)
    d = floor + amplitude * np.exp(-0.5 * ((ells - peak) / width) ** 2)
    d[:2] = 0.0
    return PowerSpectrum(d, SpectrumKind.DL)


@dataclass
class CmbResult:
    t_s: float
    evolution_times: tuple
    input_spectrum: PowerSpectrum
    estimated: dict  # label -> PowerSpectrum (C form)
    n_realizations: int
    ell_ref: int
    maps: dict = field(default_factory=dict)

    def dl(self, label: str) -> np.ndarray:
        return self.estimated[label].dl

    def ratio_stderr(self, ratio: float, ell: int) -> float:
        """Normal-approximation standard error of a ratio to the input at degree ``ell``."""
        return abs(ratio) * math.sqrt(2.0 / (self.n_realizations * (2 * ell + 1)))

    def summary(self) -> dict:
        d_in = self.input_spectrum.dl
        d0, d2 = self.dl("initial"), self.dl("eta2")
        out = {
            "t_s": self.t_s,
            "evolution_times": list(self.evolution_times),
            "argmax_input": self.input_spectrum.argmax(),
            "argmax_initial": self.estimated["initial"].argmax(),
            "argmax_eta1": self.estimated["eta1"].argmax(),
            "argmax_eta2": self.estimated["eta2"].argmax(),
        }
        for name, ell in (("ref", self.ell_ref), ("argmax", self.input_spectrum.argmax())):
            for label in ("eta1", "eta2"):
                d = self.dl(label)
                vs_input = d[ell] / d_in[ell] if d_in[ell] > 0 else float("nan")
                vs_initial = d[ell] / d0[ell] if d0[ell] > 0 else float("nan")
                out[f"ratio_{label}_{name}_vs_input"] = vs_input
                out[f"ratio_{label}_{name}_vs_initial"] = vs_initial
                out[f"ratio_{label}_{name}_stderr"] = self.ratio_stderr(vs_input, ell)
            out[f"degree_{name}"] = ell
        out["evolved_argmax_ratio_eta2"] = d2[self.estimated["eta2"].argmax()] / d_in[self.input_spectrum.argmax()]
        return out


def evolve_cmb(
    spectrum,
    times: ConformalTimes = ConformalTimes(),
    params: FractionalParams = DEFAULT_PARAMS,
    t0: float = DEFAULT_T0,
    L: int | None = None,
    N: int = 100,
    seed: int = 0,
    kind: str = "dl",
    noise_spectrum: PowerSpectrum | None = None,
    noise_scale: float = 1.0,
    ell_ref: int = 219,
    map_grid: IsoLatGrid | None = None,
    n_maps: int = 0,
) -> CmbResult:
    """Evolve an ensemble from ``spectrum`` and estimate spectra at ``eta1`` and ``eta2``.

    ``spectrum`` is a :class:`PowerSpectrum` or a path to a two-column file
    of kind ``kind``. The fBm spectrum defaults to the initial ``C_l`` times
    ``noise_scale``; ``noise_scale=0`` removes the noise. Realization ``n``
    is evolved to each time from one initial field and one noise vector.
    """
    if not isinstance(spectrum, PowerSpectrum):
        spectrum = read_spectrum(Path(spectrum), kind)
    L = spectrum.lmax if L is None else int(L)
    if L > spectrum.lmax:
        raise ConfigError(f"spectrum stops at l = {spectrum.lmax}, need {L}")
    if N < 1:
        raise ConfigError("need N >= 1")
    if t0 < 0:
        raise ConfigError("t0 must be non-negative")
    if not 1 <= ell_ref <= L:
        raise ConfigError("reference degree outside the band")
    init = spectrum.converted("cl").truncated(L) if spectrum.kind is SpectrumKind.DL else spectrum.truncated(L)
    if noise_spectrum is None:
        noise_spectrum = init.scaled(noise_scale)
    elif noise_spectrum.lmax < L:
        raise ConfigError("noise spectrum shorter than band")

    t_s = calibrate_time_scale(ell_ref, times, params)
    evo = {"initial": 0.0, "eta1": times.delta1 / t_s, "eta2": times.delta2 / t_s}
    factory = StreamFactory(seed)
    sums = {k: np.zeros(L + 1) for k in evo}
    maps: dict = {k: [] for k in evo} if n_maps else {}
    transform = SphericalTransform(map_grid, L) if n_maps and map_grid is not None else None
    for n in range(N):
        c0 = sample_isotropic(init, L, factory.stream("init", n))
        for label, t in evo.items():
            c = sample_solution(c0, t, t0, params, noise_spectrum, factory.stream("noise", n)).coeffs
            sums[label] += degree_sums(c.coeffs ** 2, L)
            if transform is not None and n < n_maps:
                maps[label].append(GridField(map_grid, transform.synthesize_fft(c), t))
    norm = N * (2.0 * np.arange(L + 1) + 1.0)
    estimated = {k: PowerSpectrum(v / norm) for k, v in sums.items()}
    return CmbResult(t_s, (evo["eta1"], evo["eta2"]), init, estimated, N, ell_ref, maps)


def write_evolved_csv(result: CmbResult, path) -> None:
    d_init, d1, d2 = result.dl("initial"), result.dl("eta1"), result.dl("eta2")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ell", "D_initial", "D_eta1", "D_eta2"])
        for ell in range(d_init.size):
            w.writerow([ell, repr(float(d_init[ell])), repr(float(d1[ell])), repr(float(d2[ell]))])
