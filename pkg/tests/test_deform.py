from __future__ import annotations

import json
import math
import warnings

import numpy as np
import pytest
from scipy import optimize, stats

from extremal_deformation.data_model import ObservationMatrix, SiteSet, grid_sites
from extremal_deformation.deform import (METHODS, DeformConfig, OptimizerSettings, _Problem,
                                         anchor_order, chi_frobenius_objective,
                                         corr_frobenius_objective, fit_deformation,
                                         load_deformation, smith_gaussian_objective, unit_square)
from extremal_deformation.dependence import DependenceMatrix, chi_br, chi_ibr, matern_corr
from extremal_deformation.exceptions import ConfigError, DomainError
from extremal_deformation.simulate import simulate_br
from extremal_deformation.tps import SplineParams

TWO = SiteSet(ids=("a", "b"), coords=[[0.0, 0.0], [1.0, 0.0]])


def _chi_dm(values, q=0.9, ids=("a", "b")):
    return DependenceMatrix(values=np.asarray(values, float), kind="chi_q", site_ids=ids,
                            threshold_q=q)


def _corr_dm(values, ids=("a", "b")):
    return DependenceMatrix(values=np.asarray(values, float), kind="correlation", site_ids=ids)


def _pair(v):
    return np.array([[1.0, v], [v, 1.0]])


def test_chi_objective_examples():
    c = float(chi_br(1.0, 1.0))
    p = SplineParams.identity(kappa=1.0)
    assert chi_frobenius_objective(p, _chi_dm(_pair(c)), TWO) == pytest.approx(0.0, abs=1e-15)
    val = chi_frobenius_objective(p, _chi_dm(_pair(c + 0.1)), TWO)
    assert val == pytest.approx(math.sqrt(2 * 0.01), abs=1e-12)
    assert val == pytest.approx(0.1414, abs=1e-4)
    ci = float(chi_ibr(1.0, 1.0, 1.0, 0.9))
    assert chi_frobenius_objective(p, _chi_dm(_pair(ci)), TWO, "chi_ibr") == pytest.approx(0, abs=1e-15)


def test_corr_objective_examples():
    r = float(matern_corr(1.0, 1.0, 1.2))
    p = SplineParams.identity(kappa=1.2)
    assert corr_frobenius_objective(p, _corr_dm(_pair(r)), TWO, 1.2) == pytest.approx(0, abs=1e-15)
    val = corr_frobenius_objective(p, _corr_dm(_pair(r - 0.2)), TWO, 1.2)
    assert val == pytest.approx(math.sqrt(2 * 0.04), abs=1e-12)
    assert val == pytest.approx(0.2828, abs=1e-4)


def test_objective_kind_checks():
    with pytest.raises(DomainError):
        chi_frobenius_objective(SplineParams.identity(), _corr_dm(_pair(0.5)), TWO)
    with pytest.raises(DomainError):
        smith_gaussian_objective(SplineParams.identity(), _chi_dm(_pair(0.5)), TWO, 1.0, 10)


def test_nonfinite_map_gives_inf():
    p = SplineParams(b1=1e200)
    assert chi_frobenius_objective(p, _chi_dm(_pair(0.5)), TWO) == math.inf


def test_smith_far_apart_sites():
    d, n = 4, 50
    far = SiteSet(ids=tuple("abcd"), coords=[[0, 0], [1e3, 0], [0, 1e3], [1e3, 1e3]])
    val = smith_gaussian_objective(SplineParams.identity(), _corr_dm(np.eye(d), tuple("abcd")),
                                   far, 1.0, n)
    assert val == pytest.approx((n - 1) * d / 2, abs=1e-9)


def test_smith_two_site_closed_form():
    n = 100
    h = optimize.brentq(lambda t: matern_corr(t, 1.0, 1.0) - 0.5, 1e-6, 10, xtol=1e-15)
    sites = SiteSet(ids=("a", "b"), coords=[[0, 0], [h, 0]])
    val = smith_gaussian_objective(SplineParams.identity(), _corr_dm(np.eye(2)), sites, 1.0, n)
    # |Omega| = 0.75, Omega^{-1} = [[1, -0.5], [-0.5, 1]] / 0.75
    expected = n / 2 * math.log(0.75) + (n - 1) / 2 * (2 / 0.75)
    assert val == pytest.approx(expected, rel=1e-12)


def test_smith_decreases_towards_sample():
    n, target = 100, 0.6
    sample = _corr_dm(_pair(target))
    rs = np.linspace(0.0, target, 61)
    vals = []
    for r in rs:
        h = optimize.brentq(lambda t: matern_corr(t, 1.0, 1.0) - r, 1e-9, 50) if r > 0 else 60.0
        sites = SiteSet(ids=("a", "b"), coords=[[0, 0], [h, 0]])
        vals.append(smith_gaussian_objective(SplineParams.identity(), sample, sites, 1.0, n))
    assert np.all(np.diff(vals) < 0)


def test_smith_singular_is_inf():
    sites = SiteSet(ids=("a", "b"), coords=[[0, 0], [1e-12, 0]])
    assert smith_gaussian_objective(SplineParams.identity(), _corr_dm(np.eye(2)), sites, 1.0,
                                    10) == math.inf


@pytest.fixture(scope="module")
def grid_problem_data():
    sites = grid_sites(4)
    obs = simulate_br(sites, 1.0, 1.0, n=500, seed=4)
    return obs, sites


@pytest.mark.parametrize("method", METHODS)
def test_fast_evaluator_matches_public_objective(method, grid_problem_data):
    obs, sites = grid_problem_data
    from extremal_deformation.deform import empirical_target
    target = empirical_target(obs, method, 0.9)
    anchors = anchor_order(sites, 3)[:6]
    prob = _Problem(method, target, sites, anchors, 0.9, obs.n_obs)
    rng = np.random.default_rng(0)
    theta = np.concatenate([rng.normal(scale=0.2, size=4), rng.normal(scale=0.05, size=6)])
    p = prob.unpack(theta)
    if method.startswith("chi"):
        ref = chi_frobenius_objective(p, target, sites, method)
    elif method == "corr_frob":
        ref = corr_frobenius_objective(p, target, sites, p.kappa)
    else:
        ref = smith_gaussian_objective(p, target, sites, p.kappa, obs.n_obs)
    assert prob(theta) == pytest.approx(ref, rel=1e-12)
    np.testing.assert_allclose(prob.pack(p), theta, atol=1e-12)


@pytest.mark.parametrize("method", METHODS)
def test_analytic_gradient(method, grid_problem_data):
    obs, sites = grid_problem_data
    from extremal_deformation.deform import empirical_target
    target = empirical_target(obs, method, 0.9)
    prob = _Problem(method, target, sites, anchor_order(sites, 1)[:5], 0.9, obs.n_obs)
    rng = np.random.default_rng(1)
    theta = np.concatenate([rng.normal(scale=0.2, size=4), rng.normal(scale=0.05, size=4)])
    _, g = prob.value_and_grad(theta)
    fd = optimize.approx_fprime(theta, prob, 1e-7)
    scale = max(1.0, np.abs(fd).max())
    np.testing.assert_allclose(g, fd, atol=1e-5 * scale)


def test_anchor_order_deterministic_and_noncollinear():
    sites = grid_sites(8)
    a, b = anchor_order(sites, 7), anchor_order(sites, 7)
    assert a == b and sorted(a) == list(range(64))
    tri = sites.coords[a[:3]]
    assert abs(np.linalg.det(np.column_stack([tri, np.ones(3)]))) > 1e-8
    line = SiteSet(ids=tuple("abcd"), coords=[[0, 0], [1, 1], [2, 2], [3, 3]])
    with pytest.raises(Exception):
        anchor_order(line, 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        DeformConfig(method="bogus")
    with pytest.raises(ConfigError):
        DeformConfig(m0=2)
    with pytest.raises(ConfigError):
        DeformConfig(m_star=20).resolved_m_star(16)
    with pytest.raises(ConfigError):
        DeformConfig.from_dict({"method": "chi_br", "extra": 1})
    with pytest.raises(ConfigError):
        DeformConfig.from_dict({"optimizer": {"speed": 1}})
    with pytest.raises(ConfigError):
        OptimizerSettings(method="bfgs")
    assert DeformConfig().resolved_m_star(64) == 16
    cfg = DeformConfig.from_dict({"method": "smith_gauss", "optimizer": {"method": "nelder-mead"}})
    assert DeformConfig.from_dict(cfg.to_dict()) == cfg


def _theory_target(method, sites, shape=1.0, q=0.9):
    h = sites.distances()
    if method == "chi_br":
        return _chi_dm(chi_br(h, shape), q, sites.ids)
    if method == "chi_ibr":
        return _chi_dm(chi_ibr(h, shape, 1.0, q), q, sites.ids)
    return _corr_dm(matern_corr(h, 1.0, shape), sites.ids)


@pytest.mark.parametrize("method", METHODS)
def test_identity_forcing_data_leaves_sites(method):
    sites = grid_sites(4)
    target = _theory_target(method, sites)
    # the Gaussian likelihood is minimised at Omega = (N - 1) / N * Omega_hat, so the
    # identity is exact only as N grows
    n = 20000 if method == "smith_gauss" else 200
    obs = ObservationMatrix(values=np.random.default_rng(0).normal(size=(n, 16)), site_ids=sites.ids)
    res = fit_deformation(obs, sites, DeformConfig(method=method, m_star=5), target=target)
    assert res.bijective and res.status == "ok"
    if method != "smith_gauss":
        assert res.objective < 1e-4
    np.testing.assert_allclose(res.d_sites.distances(), sites.distances(), atol=2e-3)


def _run_small(method, seed=0, m_star=6):
    sites = grid_sites(4)
    obs = simulate_br(sites, 2.0, 0.8, n=500, seed=seed, centre=(0.0, 0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_deformation(obs, sites, DeformConfig(method=method, m_star=m_star, seed=2))


@pytest.mark.parametrize("method", METHODS)
def test_stage_objectives_non_increasing(method):
    res = _run_small(method)
    objs = res.accepted_objectives()
    assert len(objs) >= 1
    assert all(b <= a + 1e-10 * max(1, abs(a)) for a, b in zip(objs, objs[1:]))
    assert 0 < res.params.kappa <= 2


def test_result_round_trip(tmp_path):
    res = _run_small("chi_br", m_star=5)
    res.write_json(tmp_path / "d.json")
    res.write_stage_log(tmp_path / "log.csv")
    res.write_sites(tmp_path / "s.csv")
    back = load_deformation(tmp_path / "d.json", grid_sites(4))
    np.testing.assert_array_equal(back.d_sites.coords, res.d_sites.coords)
    np.testing.assert_array_equal(back.params.delta1, res.params.delta1)
    assert (tmp_path / "log.csv").read_text().startswith("stage,anchor_added,objective")
    xy = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1, usecols=(1, 2))
    assert xy.min() == pytest.approx(0) and xy.max() == pytest.approx(1)


def test_unit_square_common_scale():
    c = np.array([[0, 0], [4, 0], [0, 2]], dtype=float)
    np.testing.assert_allclose(unit_square(c), [[0, 0], [1, 0], [0, 0.5]])


def test_deformation_deterministic():
    a, b = _run_small("chi_br", m_star=5), _run_small("chi_br", m_star=5)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_stationary_data_gives_near_identity():
    sites = grid_sites(4)
    obs = simulate_br(sites, 1.0, 1.0, n=1000, seed=3, centre=None)
    res = fit_deformation(obs, sites, DeformConfig(method="chi_br", m_star=5))
    iu = np.triu_indices(16, 1)
    rho = stats.spearmanr(res.d_sites.distances()[iu], sites.distances()[iu]).statistic
    assert rho >= 0.95


def test_nelder_mead_route_agrees():
    sites = grid_sites(4)
    target = _theory_target("chi_br", sites, shape=1.3)
    obs = ObservationMatrix(values=np.random.default_rng(0).normal(size=(50, 16)), site_ids=sites.ids)
    cfg = DeformConfig(method="chi_br", m_star=3,
                       optimizer=OptimizerSettings(method="nelder-mead", max_evals=4000))
    res = fit_deformation(obs, sites, cfg, target=target)
    assert res.objective < 1e-3 and res.params.kappa == pytest.approx(1.3, abs=0.02)
