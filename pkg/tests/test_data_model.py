from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from extremal_deformation.data_model import (ObservationMatrix, SiteSet, as_scale, grid_sites,
                                             haversine_matrix, load_observations, load_sites,
                                             rank_transform, uniform_to, write_observations,
                                             write_sites)
from extremal_deformation.exceptions import DomainError, FormatError, ParseError


def _write(path, text):
    path.write_text(text)
    return path


def test_load_observations_in_file_order(tmp_path):
    sites = _write(tmp_path / "s.csv", "id,x,y\nA,0,0\nB,1,0\n")
    obs_path = _write(tmp_path / "o.csv", "A,B\n1,2\n3,4\n5,6\n")
    obs, s = load_observations(obs_path, sites)
    assert obs.values.shape == (3, 2)
    np.testing.assert_array_equal(obs.values, [[1, 2], [3, 4], [5, 6]])
    assert s.ids == ("A", "B")


def test_columns_follow_site_file_order(tmp_path):
    sites = _write(tmp_path / "s.csv", "id,x,y\nB,1,0\nA,0,0\n")
    obs_path = _write(tmp_path / "o.csv", "A,B\n1,2\n3,4\n")
    obs, _ = load_observations(obs_path, sites)
    np.testing.assert_array_equal(obs.values, [[2, 1], [4, 3]])


def test_header_site_mismatch(tmp_path):
    sites = _write(tmp_path / "s.csv", "id,x,y\nA,0,0\nB,1,0\nC,0,1\n")
    obs_path = _write(tmp_path / "o.csv", "A,B\n1,2\n3,4\n")
    with pytest.raises(FormatError):
        load_observations(obs_path, sites)


def test_nan_cell_names_row_and_column(tmp_path):
    sites = _write(tmp_path / "s.csv", "id,x,y\nA,0,0\nB,1,0\n")
    obs_path = _write(tmp_path / "o.csv", "A,B\n1,2\n3,NaN\n")
    with pytest.raises(ParseError) as err:
        load_observations(obs_path, sites)
    assert err.value.row == 2 and err.value.column == "B"


def test_non_numeric_cell(tmp_path):
    sites = _write(tmp_path / "s.csv", "id,x,y\nA,0,0\nB,1,0\n")
    obs_path = _write(tmp_path / "o.csv", "A,B\n1,x\n")
    with pytest.raises(ParseError):
        load_observations(obs_path, sites)


def test_csv_round_trip(tmp_path, rng):
    sites = grid_sites(3)
    obs = ObservationMatrix(values=rng.normal(size=(7, 9)), site_ids=sites.ids)
    write_sites(tmp_path / "s.csv", sites)
    write_observations(tmp_path / "o.csv", obs)
    back, s = load_observations(tmp_path / "o.csv", tmp_path / "s.csv")
    np.testing.assert_array_equal(back.values, obs.values)
    np.testing.assert_array_equal(s.coords, sites.coords)


def test_site_validation():
    with pytest.raises(FormatError):
        SiteSet(ids=("a", "a"), coords=[[0, 0], [1, 1]])
    with pytest.raises(DomainError):
        SiteSet(ids=("a",), coords=[[0, 95]], metric="great-earth")
    with pytest.raises(DomainError):
        SiteSet(ids=("a",), coords=[[0, 0]], plane="X")


def test_bad_sites_header(tmp_path):
    with pytest.raises(FormatError):
        load_sites(_write(tmp_path / "s.csv", "name,x,y\nA,0,0\n"))


def test_rank_transform_uniform_example():
    obs = ObservationMatrix(values=[[3.0], [1.0], [2.0]], site_ids=("a",))
    u = rank_transform(obs, "uniform").values[:, 0]
    np.testing.assert_allclose(u, [0.75, 0.25, 0.5])


def test_uniform_to_targets():
    assert uniform_to(np.array(0.5), "exponential") == pytest.approx(0.6931471805599453, abs=1e-12)
    assert uniform_to(np.array(0.5), "frechet") == pytest.approx(1.4426950408889634, abs=1e-12)
    assert uniform_to(np.array(0.5), "gaussian") == pytest.approx(0.0, abs=1e-15)


def test_ties_use_average_ranks():
    obs = ObservationMatrix(values=[[1.0], [1.0], [2.0]], site_ids=("a",))
    np.testing.assert_allclose(rank_transform(obs, "uniform").values[:, 0], [0.375, 0.375, 0.75])


def test_constant_column_rejected():
    obs = ObservationMatrix(values=[[1.0, 2.0], [1.0, 3.0]], site_ids=("a", "b"))
    with pytest.raises(DomainError):
        rank_transform(obs, "exponential")


def test_as_scale_is_noop_on_same_scale():
    obs = ObservationMatrix(values=[[1.0], [2.0]], site_ids=("a",), scale="exponential")
    assert as_scale(obs, "exponential") is obs


def test_haversine_quarter_meridian():
    d = haversine_matrix(np.array([[0.0, 0.0], [0.0, 90.0]]))
    assert d[0, 1] == pytest.approx(6371.0 * math.pi / 2, rel=1e-12)


def test_grid_sites_layout():
    s = grid_sites(8)
    assert len(s) == 64
    assert s.coords.min() == -1.0 and s.coords.max() == 1.0


_cols = arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 4)),
               elements=st.floats(-1e6, 1e6, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(_cols, st.sampled_from(["uniform", "exponential", "frechet", "gaussian"]))
def test_rank_transform_monotone(values, target):
    if np.any(np.all(values == values[0], axis=0)):
        return
    obs = ObservationMatrix(values=values, site_ids=tuple(f"s{i}" for i in range(values.shape[1])))
    out = rank_transform(obs, target).values
    for c in range(values.shape[1]):
        order = np.argsort(values[:, c], kind="stable")
        assert np.all(np.diff(out[order, c]) >= 0)


@settings(max_examples=60, deadline=None)
@given(_cols)
def test_exponential_cdf_recovers_uniform(values):
    if np.any(np.all(values == values[0], axis=0)):
        return
    obs = ObservationMatrix(values=values, site_ids=tuple(f"s{i}" for i in range(values.shape[1])))
    u = rank_transform(obs, "uniform").values
    z = rank_transform(obs, "exponential").values
    np.testing.assert_allclose(1.0 - np.exp(-z), u, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(_cols, st.randoms(use_true_random=False))
def test_rank_transform_row_permutation_equivariant(values, rnd):
    if np.any(np.all(values == values[0], axis=0)):
        return
    ids = tuple(f"s{i}" for i in range(values.shape[1]))
    perm = list(range(values.shape[0]))
    rnd.shuffle(perm)
    a = rank_transform(ObservationMatrix(values=values, site_ids=ids), "gaussian").values
    b = rank_transform(ObservationMatrix(values=values[perm], site_ids=ids), "gaussian").values
    np.testing.assert_array_equal(a[perm], b)
