"""Sites, observations, CSV input/output and rank-based marginal transforms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special, stats

from .exceptions import DomainError, FormatError, ParseError

PLANES = ("G", "D")
METRICS = ("euclidean", "great-earth")
SCALES = ("raw", "uniform", "exponential", "frechet", "gaussian")

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class SiteSet:
    """Ordered site identifiers with 2-d coordinates.

    ``coords`` holds planar ``(x, y)`` pairs, or ``(lon, lat)`` in degrees
    when ``metric == "great-earth"``.
    """

    ids: tuple[str, ...]
    coords: np.ndarray
    plane: str = "G"
    metric: str = "euclidean"

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1, 2)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if len(self.ids) != coords.shape[0]:
            raise FormatError(
                f"{len(self.ids)} ids but {coords.shape[0]} coordinate rows")
        if len(set(self.ids)) != len(self.ids):
            raise FormatError("site ids must be unique")
        if not np.all(np.isfinite(coords)):
            raise FormatError("site coordinates must be finite")
        if self.plane not in PLANES:
            raise DomainError(f"plane must be one of {PLANES}, got {self.plane!r}")
        if self.metric not in METRICS:
            raise DomainError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.metric == "great-earth":
            if self.plane != "G":
                raise DomainError("great-earth metric is only valid on the G-plane")
            if np.any(np.abs(coords[:, 1]) > 90.0):
                raise DomainError("latitudes must lie in [-90, 90]")

    def __len__(self):
        return len(self.ids)

    @property
    def x(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.coords[:, 1]

    def index(self, site_id: str) -> int:
        return self.ids.index(str(site_id))

    def distances(self) -> np.ndarray:
        """Full ``d x d`` matrix of pairwise distances under ``metric``."""
        if self.metric == "great-earth":
            return haversine_matrix(self.coords)
        return euclidean_matrix(self.coords)

    def with_coords(self, coords, plane=None, metric=None) -> "SiteSet":
        return replace(
            self,
            coords=np.asarray(coords, dtype=float),
            plane=self.plane if plane is None else plane,
            metric=self.metric if metric is None else metric,
        )

    def subset(self, idx: Sequence[int]) -> "SiteSet":
        idx = list(idx)
        return replace(self, ids=tuple(self.ids[i] for i in idx),
                       coords=self.coords[idx])


def euclidean_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def haversine_matrix(lonlat_deg: np.ndarray, radius: float = EARTH_RADIUS_KM) -> np.ndarray:
    """Great-circle distances (km) between all pairs of ``(lon, lat)`` points."""
    lon = np.radians(lonlat_deg[:, 0])
    lat = np.radians(lonlat_deg[:, 1])
    dlon = lon[:, None] - lon[None, :]
    dlat = lat[:, None] - lat[None, :]
    a = (np.sin(dlat / 2) ** 2
         + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2)
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def grid_sites(n_side: int, lower: float = -1.0, upper: float = 1.0) -> SiteSet:
    """``n_side x n_side`` equally spaced sites on ``[lower, upper]^2``."""
    g = np.linspace(lower, upper, n_side)
    xx, yy = np.meshgrid(g, g)
    coords = np.column_stack([xx.ravel(), yy.ravel()])
    ids = [f"s{i:03d}" for i in range(coords.shape[0])]
    return SiteSet(ids=tuple(ids), coords=coords)


@dataclass(frozen=True)
class ObservationMatrix:
    """``N x d`` observations (rows = time, columns = sites) on a declared scale."""

    values: np.ndarray
    site_ids: tuple[str, ...]
    scale: str = "raw"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise FormatError("observations must be a 2-d array")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "site_ids", tuple(str(i) for i in self.site_ids))
        n, d = values.shape
        if len(self.site_ids) != d:
            raise FormatError(f"{d} columns but {len(self.site_ids)} site ids")
        if self.scale not in SCALES:
            raise DomainError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if not np.all(np.isfinite(values)):
            raise FormatError("observations contain missing or non-finite values")
        if n < 2:
            raise FormatError("need at least 2 observations")
        if self.scale == "uniform" and np.any((values <= 0) | (values >= 1)):
            raise DomainError("uniform-scale values must lie in (0, 1)")
        if self.scale == "exponential" and np.any(values < 0):
            raise DomainError("exponential-scale values must be >= 0")
        if self.scale == "frechet" and np.any(values <= 0):
            raise DomainError("Frechet-scale values must be > 0")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_sites(self) -> int:
        return self.values.shape[1]

    def columns(self, idx: Sequence[int]) -> "ObservationMatrix":
        idx = list(idx)
        return replace(self, values=self.values[:, idx],
                       site_ids=tuple(self.site_ids[i] for i in idx))


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric cell {text!r} at row {row}, column {column!r}",
                         row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite cell {text!r} at row {row}, column {column!r}",
                         row=row, column=column)
    return value


def load_sites(path, metric: str = "euclidean", plane: str = "G") -> SiteSet:
    """Read a sites CSV with header ``id,x,y``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:3] != ["id", "x", "y"]:
            raise FormatError(f"{path}: sites header must be id,x,y, got {header}")
        ids, coords = [], []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) < 3:
                raise FormatError(f"{path}: row {r} has {len(row)} fields")
            ids.append(row[0].strip())
            coords.append([_parse_float(row[1], r, "x"), _parse_float(row[2], r, "y")])
    return SiteSet(ids=tuple(ids), coords=np.array(coords), plane=plane, metric=metric)


def load_observations(path, sites_path, metric: str = "euclidean"):
    """Read an observations CSV and its sites CSV.

    The observation file has the site ids as its header row and one row per
    time point. Columns are returned in the order of the sites file.

    Returns
    -------
    (ObservationMatrix, SiteSet)
    """
    sites = load_sites(sites_path, metric=metric)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if len(header) != len(sites) or set(header) != set(sites.ids):
            raise FormatError(
                f"{path}: header has {len(header)} sites {header[:5]}... "
                f"but sites file lists {len(sites)}")
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            rows.append([_parse_float(cell, r, header[c]) for c, cell in enumerate(row)])
    values = np.array(rows, dtype=float).reshape(-1, len(header))
    order = [header.index(i) for i in sites.ids]
    obs = ObservationMatrix(values=values[:, order], site_ids=sites.ids, scale="raw")
    return obs, sites


def write_observations(path, obs: ObservationMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(obs.site_ids)
        for row in obs.values:
            writer.writerow([repr(float(v)) for v in row])


def write_sites(path, sites: SiteSet, coords: np.ndarray | None = None) -> None:
    coords = sites.coords if coords is None else coords
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y"])
        for sid, (x, y) in zip(sites.ids, coords):
            writer.writerow([sid, repr(float(x)), repr(float(y))])


def uniform_to(u: np.ndarray, target: str) -> np.ndarray:
    """Map values in (0, 1) to ``target`` marginal scale."""
    if target == "uniform":
        return u
    if target == "exponential":
        return -np.log1p(-u)
    if target == "frechet":
        return -1.0 / np.log(u)
    if target == "gaussian":
        return special.ndtri(u)
    raise DomainError(f"cannot transform to scale {target!r}")


def rank_transform(obs: ObservationMatrix, target: str) -> ObservationMatrix:
    """Site-wise empirical transform to ``target`` margins.

    Ranks (average for ties) are mapped to ``r / (N + 1)`` and then through
    the inverse CDF of the target scale. Uniform-scale input skips ranking.
    """
    if target not in SCALES or target == "raw":
        raise DomainError(f"invalid target scale {target!r}")
    if obs.scale == "uniform":
        u = obs.values
    else:
        v = obs.values
        const = np.all(v == v[0], axis=0)
        if np.any(const):
            bad = [obs.site_ids[i] for i in np.flatnonzero(const)]
            raise DomainError(f"constant column(s), rank transform undefined: {bad}")
        u = stats.rankdata(v, method="average", axis=0) / (obs.n_obs + 1.0)
    return ObservationMatrix(values=uniform_to(u, target), site_ids=obs.site_ids,
                             scale=target, meta=obs.meta)


def as_scale(obs: ObservationMatrix, target: str) -> ObservationMatrix:
    """Return ``obs`` unchanged if already on ``target``, else rank-transform it."""
    return obs if obs.scale == target else rank_transform(obs, target)
