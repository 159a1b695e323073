import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sphspde.exceptions import DomainError, SpectrumFormatError
from sphspde.fields import (
    CoefficientSet,
    PowerSpectrum,
    SpectrumKind,
    covariance_zonal,
    degree_sums,
    fbm_covariance_zonal,
    power_law_spectrum,
    read_spectrum,
    sample_isotropic,
    write_spectrum,
)
from sphspde.harmonics import Direction, real_basis_matrix
from sphspde.rng import StreamFactory


def delta_spectrum(L, ell):
    v = np.zeros(L + 1)
    v[ell] = 1.0
    return PowerSpectrum(v)


# -- PowerSpectrum --------------------------------------------------------


def test_spectrum_validation():
    with pytest.raises(DomainError):
        PowerSpectrum([1.0, -0.1])
    with pytest.raises(DomainError):
        PowerSpectrum([])
    with pytest.raises(DomainError):
        PowerSpectrum([1.0, np.inf])
    s = PowerSpectrum([1, 2, 3])
    with pytest.raises(ValueError):
        s.values[0] = 5


def test_dl_definition():
    s = PowerSpectrum([3.0, 2.0, 1.0])
    np.testing.assert_allclose(s.dl, [0.0, 2 * 2 / (2 * np.pi), 6 / (2 * np.pi)])


@given(st.lists(st.floats(0, 1e6, allow_subnormal=False), min_size=2, max_size=60))
def test_dl_cl_dl_roundtrip_is_exact(vals):
    vals[0] = 0.0
    d = PowerSpectrum(vals, SpectrumKind.DL)
    back = d.converted("cl").converted("dl")
    np.testing.assert_array_equal(back.values[1:], d.values[1:])


def test_dl_to_cl_drops_monopole_with_warning():
    d = PowerSpectrum([5.0, 1.0, 2.0], "dl")
    with pytest.warns(UserWarning, match="l = 0"):
        c = d.converted("cl")
    assert c.values[0] == 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        PowerSpectrum([0.0, 1.0], "dl").converted("cl")


def test_summability_and_tail():
    s = power_law_spectrum(100, 4.0)
    ells = np.arange(101)
    assert s.summability() == pytest.approx(np.sum((2 * ells + 1) * (1.0 + ells) ** -4))
    assert s.summability(10) + s.tail(10) == pytest.approx(s.summability())
    assert s.tail(100) == 0.0
    assert s.argmax() == 2 or s.dl[s.argmax()] == s.dl[2:].max()


# -- file format ----------------------------------------------------------


def test_read_spectrum_text():
    text = "# ell value extra\n0 1.0\n2 3.5 0.1 9  # trailing\n\n3 4e-2\n"
    s = read_spectrum(io.StringIO(text))
    np.testing.assert_array_equal(s.values, [1.0, 0.0, 3.5, 0.04])
    assert s.kind is SpectrumKind.CL


def test_read_spectrum_dl_monopole():
    with pytest.warns(UserWarning):
        s = read_spectrum("0 1.0\n1 2.0\n", kind="dl")
    assert s.values[0] == 0.0 and s.kind is SpectrumKind.DL


@pytest.mark.parametrize("text", ["", "# only comment\n", "1\n", "a 2\n", "1.5 2\n", "-1 2\n", "1 -2\n", "1 2\n1 3\n", "2 nan\n"])
def test_read_spectrum_errors(text):
    with pytest.raises(SpectrumFormatError):
        read_spectrum(io.StringIO(text))


def test_spectrum_file_roundtrip(tmp_path):
    s = power_law_spectrum(30, 5.0)
    path = tmp_path / "cl.txt"
    write_spectrum(s, path)
    back = read_spectrum(path)
    np.testing.assert_array_equal(back.values, s.values)
    write_spectrum(s, tmp_path / "dl.txt", kind="dl")
    d = read_spectrum(str(tmp_path / "dl.txt"), kind="dl")
    np.testing.assert_allclose(d.cl[1:], s.values[1:], rtol=1e-14)


# -- coefficient sets -----------------------------------------------------


def test_coefficient_set_basics():
    c = CoefficientSet(2, np.arange(9.0))
    np.testing.assert_array_equal(c.degree(1), [1, 2, 3])
    assert c.get(2, -2) == 4 and c.get(2, 2) == 8
    np.testing.assert_array_equal(c.degree_power(), [0, 14, 16 + 25 + 36 + 49 + 64])
    assert c.truncated(1).L == 1
    with pytest.raises(DomainError):
        CoefficientSet(2, np.zeros(8))
    with pytest.raises(ValueError):
        c.coeffs[0] = 1.0
    assert CoefficientSet.delta(3, 2, -1).get(2, -1) == 1.0


def test_degree_sums_axis():
    x = np.ones((4, 16))
    np.testing.assert_array_equal(degree_sums(x, 3), np.tile([1, 3, 5, 7], (4, 1)))


# -- sampling -------------------------------------------------------------


def test_zero_spectrum_samples_zero():
    c = sample_isotropic(PowerSpectrum(np.zeros(9)), 8, StreamFactory(0).stream("init", 0))
    assert np.all(c.coeffs == 0.0)


def test_sample_requires_band():
    with pytest.raises(DomainError):
        sample_isotropic(power_law_spectrum(4, 2.0), 5, np.random.default_rng(0))


def test_single_degree_variance():
    # A_l = delta_{l,2}: each c_{2,m} ~ N(0, 1), others zero
    rng = np.random.default_rng(123)
    N = 100_000
    spec = delta_spectrum(3, 2)
    samples = np.array([sample_isotropic(spec, 3, rng).coeffs for _ in range(N)])
    assert np.all(samples[:, :4] == 0) and np.all(samples[:, 9:] == 0)
    var = samples[:, 4:9].var(axis=0)
    assert np.all(np.abs(var - 1.0) < 3 * math.sqrt(2.0 / N))


def test_expected_squared_norm():
    L, N = 32, 10_000
    spec = power_law_spectrum(L, 5.0)
    f = StreamFactory(5)
    norms = np.array([sample_isotropic(spec, L, f.stream("init", n)).squared_norm() for n in range(N)])
    err = norms.std(ddof=1) / math.sqrt(N)
    assert abs(norms.mean() - spec.summability()) < 3 * err


def test_spectrum_recovery():
    L, N = 20, 2000
    spec = power_law_spectrum(L, 3.0)
    f = StreamFactory(8)
    c = np.array([sample_isotropic(spec, L, f.stream("init", n)).coeffs for n in range(N)])
    est = degree_sums(c**2, L).mean(axis=0) / (2 * np.arange(L + 1) + 1)
    assert np.all(np.abs(est - spec.values) < 4 * spec.values / math.sqrt(N))


# -- covariances ----------------------------------------------------------


def test_covariance_zonal_examples():
    s = power_law_spectrum(10, 3.0)
    assert covariance_zonal(s, 1.0) == pytest.approx(s.summability())
    assert covariance_zonal(delta_spectrum(3, 1), 0.0) == 0.0
    np.testing.assert_allclose(covariance_zonal(delta_spectrum(3, 2), np.array([1.0, 0.5])), [5.0, 5 * -0.125])


def test_fbm_covariance_examples():
    s = power_law_spectrum(6, 2.0)
    assert fbm_covariance_zonal(s, 0.0, 0.7, 0.3) == 0.0
    assert fbm_covariance_zonal(s, 1.0, 0.7, 0.3) == pytest.approx(covariance_zonal(s, 0.3))
    assert fbm_covariance_zonal(delta_spectrum(2, 0), 2.0, 0.8, 0.1) == pytest.approx(2**1.6)
    with pytest.raises(DomainError):
        fbm_covariance_zonal(s, -1.0, 0.7, 0.3)


def _mc_field_covariance(spec, L, dirs_x, dirs_y, N, seed):
    Bx = real_basis_matrix(L, dirs_x.theta, dirs_x.phi)
    By = real_basis_matrix(L, dirs_y.theta, dirs_y.phi)
    f = StreamFactory(seed)
    c = np.array([sample_isotropic(spec, L, f.stream("init", n)).coeffs for n in range(N)])
    prod = (c @ Bx.T) * (c @ By.T)
    return prod.mean(axis=0), prod.std(axis=0, ddof=1) / math.sqrt(N)


def test_mc_covariance_and_rotation_invariance():
    L, N = 8, 20_000
    spec = power_law_spectrum(L, 2.0)
    # three pairs at the same angular separation with different orientations
    sep = 0.9
    x = Direction(np.array([0.3, 1.2, 2.0]), np.array([0.0, 2.0, 4.0]))
    y = Direction(x.theta + sep, x.phi)  # same meridian, all within [0, pi]
    cov, err = _mc_field_covariance(spec, L, x, y, N, seed=4)
    expect = covariance_zonal(spec, math.cos(sep))
    assert np.all(np.abs(cov - expect) < 3.5 * err)
    assert np.ptp(cov) < 4 * err.max() * math.sqrt(2)


def test_fbm_covariance_by_simulation():
    # B(t) coefficients are t^H sqrt(A_l) z; compare E B(t,x)B(t,y) by MC
    L, N, t, H = 6, 20_000, 2.0, 0.8
    spec = power_law_spectrum(L, 2.0)
    x = Direction(np.array([0.5]), np.array([1.0]))
    y = Direction(np.array([1.3]), np.array([2.0]))
    cov, err = _mc_field_covariance(spec, L, x, y, N, seed=6)
    cosang = float(np.sum(x.cartesian() * y.cartesian()))
    expect = fbm_covariance_zonal(spec, t, H, cosang)
    assert abs(t ** (2 * H) * cov[0] - expect) < 3.5 * t ** (2 * H) * err[0]
