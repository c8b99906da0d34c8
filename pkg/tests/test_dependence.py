from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import phi_oracle
from extremal_deformation.data_model import ObservationMatrix, grid_sites
from extremal_deformation.dependence import (chi_br, chi_ibr, empirical_chi_matrix,
                                             empirical_corr_matrix, extremal_coefficient,
                                             matern_corr, normal_cdf, write_long_csv)
from extremal_deformation.exceptions import DomainError


def test_normal_cdf_against_series():
    for x in (-3.0, -1.0, -0.2, 0.0, 0.7, 1.0, 2.5):
        assert normal_cdf(x) == pytest.approx(phi_oracle(x), abs=1e-13)


def test_chi_br_reference_value():
    assert chi_br(2.0, 1.0, 1.0) == pytest.approx(2.0 - 2.0 * phi_oracle(1.0), abs=1e-12)
    assert chi_br(2.0, 1.0, 1.0) == pytest.approx(0.3173, abs=1e-4)


def test_chi_br_limits():
    assert chi_br(0.0, 1.3, 0.7) == 1.0
    h = np.linspace(0, 200, 500)
    v = chi_br(h, 1.0, 1.0)
    assert np.all(np.diff(v) < 0) and v[-1] < 1e-20


def test_extremal_coefficient_values():
    assert extremal_coefficient(0.0, 1.0) == 1.0
    assert extremal_coefficient(2.0, 1.0, 1.0) == pytest.approx(2.0 * phi_oracle(1.0), abs=1e-12)
    assert extremal_coefficient(1e6, 1.0) == pytest.approx(2.0)


def test_chi_ibr_values():
    assert chi_ibr(0.0, 1.0, q=0.9) == 1.0
    assert chi_ibr(1e8, 1.0, q=0.9) == pytest.approx(0.1)
    # theta = 1.5 at h where sqrt(2 gamma)/2 = Phi^{-1}(0.75)
    from scipy.special import ndtri
    h = 2.0 * ndtri(0.75) ** 2
    assert chi_ibr(h, 1.0, 1.0, 0.9) == pytest.approx(0.1 ** 0.5, abs=1e-12)
    assert 0.1 ** 0.5 == pytest.approx(0.3162, abs=1e-4)


def test_parameter_errors():
    with pytest.raises(DomainError):
        chi_br(1.0, 2.5)
    with pytest.raises(DomainError):
        chi_br(1.0, 1.0, lam=0.0)
    with pytest.raises(DomainError):
        chi_br(-1.0, 1.0)
    with pytest.raises(DomainError):
        chi_ibr(1.0, 1.0, q=1.0)
    with pytest.raises(DomainError):
        matern_corr(1.0, 1.0, 0.0)


@pytest.mark.parametrize("theta1", [0.3, 1.0, 2.7])
def test_matern_half_is_exponential(theta1):
    h = np.linspace(0.0, 10.0, 401)
    np.testing.assert_allclose(matern_corr(h, theta1, 0.5), np.exp(-math.sqrt(2) * h / theta1),
                               atol=1e-12, rtol=0)


def _matern_quadrature(h, theta1, nu):
    # K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt
    x = 2.0 * h * math.sqrt(nu) / theta1
    k, _ = integrate.quad(lambda t: math.exp(-x * math.cosh(t)) * math.cosh(nu * t), 0, 30.0)
    return x ** nu * k / (2 ** (nu - 1) * math.gamma(nu))


@pytest.mark.parametrize("nu", [0.8, 1.2, 2.5])
def test_matern_against_quadrature(nu):
    for h in (0.05, 0.4, 1.0, 3.0):
        assert matern_corr(h, 1.0, nu) == pytest.approx(_matern_quadrature(h, 1.0, nu), rel=1e-9)


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5, 2.5])
def test_matern_monotone(nu):
    h = np.linspace(0, 20, 2000)
    v = matern_corr(h, 1.3, nu)
    assert v[0] == 1.0 and np.all(np.diff(v) <= 0) and v[-1] < 1e-6


@settings(max_examples=80, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.1, 5.0), st.floats(0.5, 0.995))
def test_chi_families_monotone_and_bounded(kappa, lam, q):
    h = np.linspace(0.0, 10.0, 200)
    theta = extremal_coefficient(h, kappa, lam)
    # strictly decreasing until the value saturates in floating point
    for v, live in ((chi_br(h, kappa, lam), chi_br(h, kappa, lam)[1:] > 1e-300),
                    (chi_ibr(h, kappa, lam, q), 2.0 - theta[1:] > 1e-12)):
        assert np.all((v >= 0) & (v <= 1))
        assert np.all(np.diff(v)[live] < 0)
    assert np.all((theta >= 1) & (theta <= 2))
    np.testing.assert_allclose(chi_ibr(h, kappa, lam, q), (1 - q) ** (theta - 1), rtol=1e-12)


def test_empirical_chi_identical_columns():
    x = np.random.default_rng(0).normal(size=200)
    obs = ObservationMatrix(values=np.column_stack([x, x]), site_ids=("a", "b"))
    assert empirical_chi_matrix(obs, 0.9).values[0, 1] == 1.0


def test_empirical_chi_hand_sample():
    # uniform values chosen so site i exceeds q=0.8 at t=9,10 and j at t=8,9
    u = np.full((10, 2), 0.1)
    u[[8, 9], 0] = 0.9
    u[[7, 8], 1] = 0.9
    obs = ObservationMatrix(values=u, site_ids=("i", "j"), scale="uniform")
    chi = empirical_chi_matrix(obs, 0.8).values
    assert chi[0, 1] == 0.5 and chi[1, 0] == 0.5


def test_empirical_chi_independent_pair():
    rng = np.random.default_rng(2024)
    n = 200_000
    obs = ObservationMatrix(values=rng.normal(size=(n, 2)), site_ids=("a", "b"))
    chi = empirical_chi_matrix(obs, 0.9).values[0, 1]
    se = math.sqrt(0.1 * 0.9 / (0.1 * n))
    assert abs(chi - 0.1) < 3 * se


def test_empirical_chi_no_exceedance_names_site():
    u = np.full((10, 2), 0.5)
    u[0, 0] = 0.95
    obs = ObservationMatrix(values=u, site_ids=("a", "b"), scale="uniform")
    with pytest.raises(DomainError, match="b"):
        empirical_chi_matrix(obs, 0.9)


def test_empirical_chi_symmetric_and_bounded(rng):
    obs = ObservationMatrix(values=rng.normal(size=(503, 5)), site_ids=tuple("abcde"))
    chi = empirical_chi_matrix(obs, 0.9).values
    np.testing.assert_allclose(chi, chi.T)
    assert np.all((chi >= 0) & (chi <= 1)) and np.all(np.diag(chi) == 1)


def test_empirical_corr():
    x = np.random.default_rng(3).normal(size=300)
    obs = ObservationMatrix(values=np.column_stack([x, x, -x]), site_ids=("a", "b", "c"))
    r = empirical_corr_matrix(obs).values
    assert r[0, 1] == pytest.approx(1.0) and r[0, 2] == pytest.approx(-1.0)


def test_empirical_corr_hand_sample():
    vals = np.array([[1.0, 2.0], [2.0, 1.0], [3.0, 4.0], [4.0, 3.0], [5.0, 5.0]])
    obs = ObservationMatrix(values=vals, site_ids=("a", "b"))
    from scipy.special import ndtri
    z = ndtri(np.array([[1, 2], [2, 1], [3, 4], [4, 3], [5, 5]]) / 6.0)
    a, b = z[:, 0] - z[:, 0].mean(), z[:, 1] - z[:, 1].mean()
    expected = (a @ b) / math.sqrt((a @ a) * (b @ b))
    assert empirical_corr_matrix(obs).values[0, 1] == pytest.approx(expected, abs=1e-14)


def test_write_long_csv(tmp_path, rng):
    sites = grid_sites(2)
    obs = ObservationMatrix(values=rng.normal(size=(50, 4)), site_ids=sites.ids)
    write_long_csv(tmp_path / "c.csv", empirical_corr_matrix(obs), sites)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "id_i,id_j,h,value" and len(lines) == 7
