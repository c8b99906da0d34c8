"""Restricted thin-plate-spline maps from the G-plane to the D-plane.

Each output coordinate is an affine term plus radial basis functions
``h^2 log h`` centred at a fixed subset of sites (the anchors)::

    x* = b1^2 x + rho b1 b2 y + sum_k delta1_k g_k(x, y)
    y* = b2^2 y + rho b1 b2 x + sum_k delta2_k g_k(x, y)

Both delta vectors satisfy ``sum d = sum d x = sum d y = 0`` over the anchor
coordinates. The deltas of the first three anchors are eliminated by solving
those constraints, leaving ``2m - 3`` free spline parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import SiteSet
from .exceptions import DomainError, NumericError


def tps_basis(h):
    """``h^2 log h`` with the continuous extension 0 at ``h = 0``."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise DomainError("tps_basis needs nonnegative distances")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(h > 0, h * h * np.log(np.where(h > 0, h, 1.0)), 0.0)
    return out if out.ndim else float(out)


def basis_matrix(points: np.ndarray, centres: np.ndarray) -> np.ndarray:
    """``(n, m)`` matrix of ``g_k(point)`` for each point and anchor centre."""
    diff = points[:, None, :] - centres[None, :, :]
    r2 = np.sum(diff * diff, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # h^2 log h = r2 log(r2) / 2
        out = np.where(r2 > 0, 0.5 * r2 * np.log(np.where(r2 > 0, r2, 1.0)), 0.0)
    return out


def basis_gradients(points: np.ndarray, centres: np.ndarray):
    """Partial derivatives of every basis function at every point.

    ``d/dx [h^2 log h] = (x - x_k)(2 log h + 1)``; zero at the centre.
    """
    diff = points[:, None, :] - centres[None, :, :]
    r2 = np.sum(diff * diff, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(r2 > 0, np.log(np.where(r2 > 0, r2, 1.0)) + 1.0, 0.0)
    return diff[..., 0] * fac, diff[..., 1] * fac


def constraint_matrix(centres: np.ndarray) -> np.ndarray:
    """Rows ``[1, x_k, y_k]`` stacked as a ``3 x m`` matrix."""
    return np.vstack([np.ones(len(centres)), centres[:, 0], centres[:, 1]])


def complete_deltas(free_deltas, anchor_coords) -> np.ndarray:
    """Prepend the three deltas fixed by the moment constraints.

    Parameters
    ----------
    free_deltas : array of length ``m - 3``
    anchor_coords : ``(m, 2)`` array; the first three rows must not be collinear.
    """
    anchor_coords = np.asarray(anchor_coords, dtype=float)
    free = np.asarray(free_deltas, dtype=float).ravel()
    m = anchor_coords.shape[0]
    if m < 3:
        raise DomainError("need at least three anchors")
    if free.size != m - 3:
        raise DomainError(f"expected {m - 3} free deltas, got {free.size}")
    c = constraint_matrix(anchor_coords)
    a = c[:, :3]
    # relative tolerance on the triangle area spanned by the first three anchors
    scale = max(np.ptp(anchor_coords[:3], axis=0).max(), 1e-300)
    if abs(np.linalg.det(a)) <= 1e-10 * scale * scale:
        raise NumericError("first three anchors are collinear; constraint system is singular")
    head = np.linalg.solve(a, -(c[:, 3:] @ free))
    return np.concatenate([head, free])


@dataclass
class SplineParams:
    """Parameters of a restricted thin-plate spline plus the carried shape parameter.

    ``delta1``/``delta2`` are full length-``m`` vectors satisfying the
    moment constraints; ``anchor_coords`` are the G-plane anchor locations.
    """

    b1: float = 1.0
    b2: float = 1.0
    rho: float = 0.0
    anchors: tuple[int, ...] = ()
    anchor_coords: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    delta1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kappa: float = 1.0

    def __post_init__(self):
        self.anchor_coords = np.asarray(self.anchor_coords, dtype=float).reshape(-1, 2)
        self.delta1 = np.asarray(self.delta1, dtype=float).ravel()
        self.delta2 = np.asarray(self.delta2, dtype=float).ravel()
        self.anchors = tuple(int(a) for a in self.anchors)
        m = self.anchor_coords.shape[0]
        if not (len(self.anchors) == m == self.delta1.size == self.delta2.size):
            raise DomainError("anchors, anchor_coords and deltas must have equal length")

    @property
    def m(self) -> int:
        return len(self.anchors)

    @classmethod
    def identity(cls, kappa: float = 1.0) -> "SplineParams":
        return cls(kappa=kappa)

    @classmethod
    def from_free(cls, b1, b2, rho, kappa, anchors, anchor_coords, free1, free2):
        anchor_coords = np.asarray(anchor_coords, dtype=float).reshape(-1, 2)
        if len(anchors) == 0:
            d1 = d2 = np.zeros(0)
        else:
            d1 = complete_deltas(free1, anchor_coords)
            d2 = complete_deltas(free2, anchor_coords)
        return cls(b1=b1, b2=b2, rho=rho, anchors=tuple(anchors),
                   anchor_coords=anchor_coords, delta1=d1, delta2=d2, kappa=kappa)

    def constraint_residuals(self) -> np.ndarray:
        c = constraint_matrix(self.anchor_coords)
        return np.concatenate([c @ self.delta1, c @ self.delta2])

    def to_dict(self, site_ids=None) -> dict:
        d = {
            "b1": self.b1, "b2": self.b2, "rho": self.rho, "kappa": self.kappa,
            "anchors": list(self.anchors),
            "anchor_coords": self.anchor_coords.tolist(),
            "delta1": self.delta1.tolist(), "delta2": self.delta2.tolist(),
        }
        if site_ids is not None:
            d["anchor_ids"] = [site_ids[i] for i in self.anchors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplineParams":
        return cls(b1=d["b1"], b2=d["b2"], rho=d["rho"], kappa=d.get("kappa", 1.0),
                   anchors=tuple(d["anchors"]), anchor_coords=np.array(d["anchor_coords"]),
                   delta1=np.array(d["delta1"]), delta2=np.array(d["delta2"]))


def deform_points(params: SplineParams, points: np.ndarray, basis: np.ndarray | None = None) -> np.ndarray:
    """Map ``(n, 2)`` G-plane points; ``basis`` may be a precomputed basis matrix."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]
    b1, b2 = np.float64(params.b1), np.float64(params.b2)
    with np.errstate(over="ignore", invalid="ignore"):
        cross = params.rho * b1 * b2
        out = np.empty_like(points)
        out[:, 0] = b1 ** 2 * x + cross * y
        out[:, 1] = b2 ** 2 * y + cross * x
    if params.m:
        g = basis_matrix(points, params.anchor_coords) if basis is None else basis
        out[:, 0] += g @ params.delta1
        out[:, 1] += g @ params.delta2
    return out


def apply_deformation(params: SplineParams, sites: SiteSet) -> SiteSet:
    """Return the D-plane image of ``sites`` (same ids and order, Euclidean metric)."""
    return sites.with_coords(deform_points(params, sites.coords), plane="D", metric="euclidean")


def jacobian(params: SplineParams, points: np.ndarray) -> np.ndarray:
    """``(n, 2, 2)`` analytic Jacobian of the spline map."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    cross = params.rho * params.b1 * params.b2
    jac = np.empty((points.shape[0], 2, 2))
    jac[:, 0, 0] = params.b1 ** 2
    jac[:, 0, 1] = cross
    jac[:, 1, 0] = cross
    jac[:, 1, 1] = params.b2 ** 2
    if params.m:
        gx, gy = basis_gradients(points, params.anchor_coords)
        jac[:, 0, 0] += gx @ params.delta1
        jac[:, 0, 1] += gy @ params.delta1
        jac[:, 1, 0] += gx @ params.delta2
        jac[:, 1, 1] += gy @ params.delta2
    return jac


def jacobian_det(params: SplineParams, points: np.ndarray) -> np.ndarray:
    jac = jacobian(params, points)
    return jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]


def bounding_box(coords: np.ndarray) -> tuple[float, float, float, float]:
    coords = np.asarray(coords, dtype=float)
    return (float(coords[:, 0].min()), float(coords[:, 0].max()),
            float(coords[:, 1].min()), float(coords[:, 1].max()))


def check_bijectivity(params: SplineParams, domain, resolution: int = 64,
                      expand: float = 0.05) -> bool:
    """Fold check: the Jacobian determinant keeps one strict sign on a grid.

    ``domain`` is ``(xmin, xmax, ymin, ymax)``; it is widened by ``expand``
    of its extent on every side before gridding.
    """
    if resolution < 16:
        raise DomainError("resolution must be at least 16")
    xmin, xmax, ymin, ymax = domain
    wx, wy = (xmax - xmin) * expand, (ymax - ymin) * expand
    gx = np.linspace(xmin - wx, xmax + wx, resolution)
    gy = np.linspace(ymin - wy, ymax + wy, resolution)
    xx, yy = np.meshgrid(gx, gy)
    det = jacobian_det(params, np.column_stack([xx.ravel(), yy.ravel()]))
    if not np.all(np.isfinite(det)):
        return False
    return bool(np.all(det > 0) or np.all(det < 0))
