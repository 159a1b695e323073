import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphspde.exceptions import ConfigError, DomainError
from sphspde.fields import CoefficientSet, PowerSpectrum, degree_of_index, power_law_spectrum, sample_isotropic
from sphspde.operator import FractionalParams, psi_eigenvalue, sigma_sq
from sphspde.rng import StreamFactory
from sphspde.analysis import (
    IncrementConfig,
    TruncationConfig,
    estimate_power_spectrum,
    fit_loglog_rate,
    increment_study,
    truncation_study,
    write_manifest,
    write_spectrum_csv,
    write_study_csv,
)
from sphspde.solver import propagate_cauchy

P = FractionalParams(0.8, 0.8, 0.5)
FP = FractionalParams(0.5, 0.5, 0.8)


def zeros(L):
    return PowerSpectrum(np.zeros(L + 1))


# -- fit_loglog_rate ------------------------------------------------------


def test_fit_identity():
    f = fit_loglog_rate([1, 2, 4, 8], [1, 2, 4, 8])
    assert f.slope == pytest.approx(1.0) and f.intercept == pytest.approx(0.0, abs=1e-12)
    assert f.rms_residual < 1e-12


def test_fit_exact_power_law():
    xs = np.array([8.0, 16, 32, 64, 128])
    f = fit_loglog_rate(xs, 3 * xs ** -1.5)
    assert f.slope == pytest.approx(-1.5, abs=1e-12)
    assert f.intercept == pytest.approx(math.log(3), abs=1e-12)
    assert f.rms_residual < 1e-12
    assert set(f.as_dict()) == {"slope", "intercept", "rms_residual"}


def test_fit_noisy_power_law_within_ci():
    # lognormal scatter sd 0.1 on 40 points; slope se = sd / sqrt(sum (lx - mean)^2)
    rng = np.random.default_rng(0)
    xs = np.logspace(0, 3, 40)
    lx = np.log(xs)
    se = 0.1 / math.sqrt(np.sum((lx - lx.mean()) ** 2))
    hits = 0
    for _ in range(200):
        ys = 2.0 * xs ** 0.7 * np.exp(0.1 * rng.standard_normal(xs.size))
        hits += abs(fit_loglog_rate(xs, ys).slope - 0.7) < 1.96 * se
    assert 180 <= hits <= 200  # nominal 95%


@pytest.mark.parametrize("xs,ys", [([1, 2], [1, 0]), ([0, 1], [1, 1]), ([1], [1]), ([1, 1], [1, 2]),
                                   ([1, 2], [1, np.nan]), ([1, 2, 3], [1, 2])])
def test_fit_rejects_bad_input(xs, ys):
    with pytest.raises(DomainError):
        fit_loglog_rate(xs, ys)


@settings(max_examples=40, deadline=None)
@given(st.floats(-4, 4), st.floats(0.01, 100))
def test_fit_recovers_any_exact_power_law(slope, scale):
    xs = np.array([1.0, 3.0, 10.0, 30.0])
    f = fit_loglog_rate(xs, scale * xs ** slope)
    assert f.slope == pytest.approx(slope, abs=1e-9)


# -- truncation study -----------------------------------------------------


def small_truncation(**kw):
    base = dict(params=P, init_spectrum=power_law_spectrum(32, 5.0), noise_spectrum=power_law_spectrum(32, 5.0),
                L0=32, L_list=(2, 4, 8, 16), t=1e-3, t0=1e-3, N=8, seed=1)
    base.update(kw)
    return TruncationConfig(**base)


def test_zero_spectra_give_zero_error():
    cfg = small_truncation(init_spectrum=zeros(32), noise_spectrum=zeros(32))
    s = truncation_study(cfg)
    assert np.all(s.mean_sq == 0.0)
    assert s.fit is None and math.isnan(s.fitted_rate)


def test_errors_nonincreasing_in_L_per_realization():
    s = truncation_study(small_truncation())
    assert np.all(np.diff(s.samples, axis=1) <= 0)
    assert np.all(s.samples >= 0)


def test_last_degree_error_is_degree_power():
    # error for L0 - 1 is the power in degree L0 alone: (2 L0 + 1) A_hat_{L0}
    L0 = 24
    cfg = small_truncation(L0=L0, L_list=(L0 - 1,), N=400, init_spectrum=power_law_spectrum(L0, 4.0),
                           noise_spectrum=power_law_spectrum(L0, 4.0))
    s = truncation_study(cfg)
    assert s.mean_sq[0] == pytest.approx((2 * L0 + 1) * s.per_degree_power[L0], rel=1e-12)
    # and it matches the expected degree power within MC error
    psi = psi_eigenvalue(L0, P)
    expect = (2 * L0 + 1) * (1 + L0) ** -4.0 * (math.exp(-2 * psi * 2e-3) + sigma_sq(L0, 1e-3, P))
    assert abs(s.mean_sq[0] - expect) < 4 * s.stderr[0]


def test_grid_path_matches_coefficients_on_exact_grid():
    s = truncation_study(small_truncation(evaluation="both"))
    assert s.diagnostics["grid_exact"]
    assert s.diagnostics["max_abs_path_discrepancy"] < 1e-9
    g = truncation_study(small_truncation(evaluation="grid"))
    c = truncation_study(small_truncation())
    np.testing.assert_allclose(g.mean_sq, c.mean_sq, rtol=1e-9)


def test_equal_area_discrepancy_is_reported():
    s = truncation_study(small_truncation(evaluation="both", grid_kind="equal-area", n_rings=40, n_phi=80))
    assert not s.diagnostics["grid_exact"]
    assert np.isfinite(s.diagnostics["max_abs_path_discrepancy"])


def test_truncation_fit_window():
    s = truncation_study(small_truncation(fit_window=(4, 16)))
    mask = (s.xs >= 4) & (s.xs <= 16)
    ref = fit_loglog_rate(s.xs[mask], s.rms[mask])
    assert s.fit.slope == pytest.approx(ref.slope)
    assert s.fit_window == (4, 16)


def test_truncation_threads_identical():
    a = truncation_study(small_truncation(threads=1))
    b = truncation_study(small_truncation(threads=4))
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.per_degree_power, b.per_degree_power)


def test_truncation_config_errors():
    for kw in (dict(N=1), dict(L_list=()), dict(L_list=(32,)), dict(t=-1.0), dict(evaluation="x"),
               dict(init_spectrum=power_law_spectrum(10, 5.0))):
        with pytest.raises(ConfigError):
            truncation_study(small_truncation(**kw))


def test_low_degrees_shared_across_band_limits():
    # the L0 = 16 and L0 = 32 studies see the same low-degree draws
    a = truncation_study(small_truncation(L0=16, L_list=(1, 2)))
    b = truncation_study(small_truncation(L0=32, L_list=(1, 2)))
    np.testing.assert_array_equal(a.per_degree_power[:17], b.per_degree_power[:17])


# -- increment study ------------------------------------------------------


def small_increment(**kw):
    base = dict(params=FP, init_spectrum=power_law_spectrum(16, 5.0), noise_spectrum=power_law_spectrum(16, 5.0),
                L=16, t=1e-3, t0=1e-3, h_list=(1e-6, 1e-5, 1e-4, 1e-3), N=20, seed=2)
    base.update(kw)
    return IncrementConfig(**base)


def test_zero_spectra_give_zero_increments():
    s = increment_study(small_increment(init_spectrum=zeros(16), noise_spectrum=zeros(16)))
    assert np.all(s.mean_sq == 0.0)


def test_noise_free_increment_slope_is_one():
    s = increment_study(small_increment(noise_spectrum=zeros(16), h_list=tuple(np.logspace(-8, -4, 5))))
    assert s.fit.slope == pytest.approx(1.0, abs=0.01)


def test_noise_free_increment_exact_value():
    # with no noise the increment is (e^{-psi(t+h)} - e^{-psi t}) e^{-psi t0} c(0)
    cfg = small_increment(noise_spectrum=zeros(16), N=3, h_list=(0.01,))
    s = increment_study(cfg)
    f = StreamFactory(cfg.seed)
    psi = np.asarray(psi_eigenvalue(np.arange(17), FP))[degree_of_index(16)]
    for n in range(3):
        c0 = sample_isotropic(cfg.init_spectrum, 16, f.stream("init", n)).coeffs
        d = (np.exp(-psi * (cfg.t + 0.01)) - np.exp(-psi * cfg.t)) * np.exp(-psi * cfg.t0) * c0
        assert s.samples[n, 0] == pytest.approx(np.sum(d ** 2), rel=1e-12)


def test_shared_and_innovation_agree_without_noise():
    a = increment_study(small_increment(noise_spectrum=zeros(16), construction="shared"))
    b = increment_study(small_increment(noise_spectrum=zeros(16), construction="innovation"))
    np.testing.assert_allclose(a.mean_sq, b.mean_sq, rtol=1e-10)


def test_innovation_brownian_mean_matches_law():
    # one-step Markov increment: E|D|^2 = sum (2l+1)[(e^{-psi h}-1)^2 Var c(t) + A sigma_h^2]
    L, h, t, t0 = 6, 0.05, 0.1, 0.02
    p = FractionalParams(0.5, 0.5, 0.5)
    init, noise = power_law_spectrum(L, 3.0), power_law_spectrum(L, 2.0)
    s = increment_study(IncrementConfig(p, init, noise, L=L, t=t, t0=t0, h_list=(h,), N=4000, seed=3,
                                        construction="innovation"))
    ells = np.arange(L + 1)
    psi = np.asarray(psi_eigenvalue(ells, p))
    var_t = np.exp(-2 * psi * (t + t0)) * init.cl + noise.cl * np.asarray(sigma_sq(ells, t, p))
    expect = np.sum((2 * ells + 1) * (np.expm1(-psi * h) ** 2 * var_t + noise.cl * np.asarray(sigma_sq(ells, h, p))))
    assert abs(s.mean_sq[0] - expect) < 4 * s.stderr[0]


def test_auto_window():
    assert small_increment(params=FractionalParams(0.5, 0.5, 0.5)).resolved_window() == (None, 1e-3)
    assert small_increment().resolved_window() == (None, None)
    assert small_increment(params=FractionalParams(0.5, 0.5, 0.5), t=0.0).resolved_window() == (None, None)
    assert small_increment(fit_window=(1e-5, None)).resolved_window() == (1e-5, None)


def test_increment_threads_identical():
    for construction in ("shared", "innovation"):
        a = increment_study(small_increment(construction=construction, threads=1))
        b = increment_study(small_increment(construction=construction, threads=3))
        np.testing.assert_array_equal(a.samples, b.samples)


def test_increment_config_errors():
    for kw in (dict(N=1), dict(h_list=()), dict(h_list=(0.0,)), dict(t=-1.0), dict(construction="x"),
               dict(noise_spectrum=power_law_spectrum(4, 2.0))):
        with pytest.raises(ConfigError):
            increment_study(small_increment(**kw))


# -- spectrum estimation --------------------------------------------------


def test_estimate_zero_ensemble():
    s = estimate_power_spectrum([CoefficientSet.zeros(5)] * 3)
    assert np.all(s.values == 0.0) and s.lmax == 5


def test_estimate_errors():
    with pytest.raises(DomainError):
        estimate_power_spectrum([])
    with pytest.raises(DomainError):
        estimate_power_spectrum(np.zeros((0, 9)))
    with pytest.raises(DomainError):
        estimate_power_spectrum([CoefficientSet.zeros(2), CoefficientSet.zeros(3)])
    with pytest.raises(DomainError):
        estimate_power_spectrum(np.zeros((2, 8)))


def test_estimate_single_field():
    c = CoefficientSet(1, np.array([2.0, 1.0, 1.0, 1.0]))
    np.testing.assert_allclose(estimate_power_spectrum([c]).values, [4.0, 1.0])
    np.testing.assert_allclose(estimate_power_spectrum(c.coeffs[None, :]).values, [4.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.booleans(), min_size=4, max_size=4))
def test_estimate_sign_flip_invariant(flips):
    rng = np.random.default_rng(1)
    arr = rng.standard_normal((4, 25))
    signs = np.where(flips, -1.0, 1.0)[:, None]
    np.testing.assert_array_equal(estimate_power_spectrum(arr).values, estimate_power_spectrum(signs * arr).values)


def test_estimate_unbiased():
    L, N = 20, 500
    spec = power_law_spectrum(L, 5.0)
    f = StreamFactory(11)
    est = estimate_power_spectrum([sample_isotropic(spec, L, f.stream("init", n)) for n in range(N)])
    ells = np.arange(L + 1)
    tol = 4 * spec.values / np.sqrt(N * (2 * ells + 1))
    assert np.all(np.abs(est.values - spec.values) < tol)


def test_estimate_after_cauchy_decay():
    L, N, t0 = 12, 2000, 0.05
    spec = power_law_spectrum(L, 3.0)
    f = StreamFactory(12)
    est = estimate_power_spectrum([propagate_cauchy(sample_isotropic(spec, L, f.stream("init", n)), t0, P)
                                   for n in range(N)])
    ells = np.arange(L + 1)
    expect = np.exp(-2 * np.asarray(psi_eigenvalue(ells, P)) * t0) * spec.values
    assert np.all(np.abs(est.values / expect - 1) < 4 / np.sqrt(N * (2 * ells + 1)))


# -- writers --------------------------------------------------------------


def test_study_csv(tmp_path):
    s = truncation_study(small_truncation())
    path = tmp_path / "t.csv"
    write_study_csv(s, path, "L", "mean_sq_error")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["L", "mean_sq_error", "stderr"]
    assert [r[0] for r in rows[1:]] == ["2", "4", "8", "16"]
    np.testing.assert_array_equal([float(r[1]) for r in rows[1:]], s.mean_sq)

    inc = increment_study(small_increment())
    write_study_csv(inc, tmp_path / "i.csv", "h", "mean_sq_increment")
    rows = list(csv.reader(open(tmp_path / "i.csv")))
    assert rows[0] == ["h", "mean_sq_increment", "stderr"] and float(rows[1][0]) == 1e-6


def test_spectrum_csv_and_manifest(tmp_path):
    write_spectrum_csv(PowerSpectrum([1.0, 0.5]), tmp_path / "s.csv")
    assert open(tmp_path / "s.csv").read() == "ell,A_hat\n0,1.0\n1,0.5\n"
    write_manifest(tmp_path / "m.json", {"b": np.float64(1.5), "a": (np.int64(2), float("nan")), "c": np.arange(2)})
    m = json.load(open(tmp_path / "m.json"))
    assert m == {"a": [2, "nan"], "b": 1.5, "c": [0, 1]}
