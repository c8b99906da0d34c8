"""Objective functions and the incremental anchor-point fitting procedure.

Four objectives map a spline (plus one shape parameter) to a scalar:

``chi_br`` / ``chi_ibr``
    Frobenius distance between the empirical ``chi_q`` matrix and the
    stationary BR / inverted BR tail dependence at D-plane distances.
``corr_frob``
    Same form with Gaussian-score correlations and a Matérn correlation.
``smith_gauss``
    Gaussian log-likelihood of the sample correlation matrix with Matérn
    correlations at D-plane distances.

The range parameter is fixed to 1 throughout; scale is absorbed by the spline.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, special
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import pdist

from .data_model import ObservationMatrix, SiteSet
from .dependence import (DependenceMatrix, chi_br, chi_ibr, empirical_chi_matrix,
                         empirical_corr_matrix, matern_corr)
from .exceptions import ConfigError, DomainError, NumericError
from .tps import (SplineParams, basis_matrix, bounding_box, check_bijectivity,
                  complete_deltas, deform_points)

log = logging.getLogger(__name__)

METHODS = ("chi_br", "chi_ibr", "corr_frob", "smith_gauss")
MAX_ANCHOR_RETRIES = 5


OPTIMIZERS = ("quasi-newton", "nelder-mead")


@dataclass
class OptimizerSettings:
    """Per-stage search settings.

    ``method`` is ``"quasi-newton"`` (L-BFGS with analytic gradients) or
    ``"nelder-mead"`` (derivative-free simplex). ``restarts`` re-runs the
    search from its own optimum until it stops improving.
    """

    max_evals: int = 3000
    xtol: float = 1e-4
    restarts: int = 1
    method: str = "quasi-newton"

    def __post_init__(self):
        if self.max_evals < 1 or self.xtol <= 0 or self.restarts < 0:
            raise ConfigError("optimizer needs max_evals >= 1, xtol > 0, restarts >= 0")
        if self.method not in OPTIMIZERS:
            raise ConfigError(f"optimizer method must be one of {OPTIMIZERS}")


@dataclass
class DeformConfig:
    """Settings for :func:`fit_deformation`.

    ``m_star`` defaults to roughly a quarter of the number of sites.
    """

    method: str = "chi_br"
    q: float = 0.9
    m0: int = 3
    m_star: int | None = None
    seed: int = 0
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    bijectivity_resolution: int = 64

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerSettings(**self.optimizer)
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if self.m0 < 3:
            raise ConfigError("m0 must be at least 3")
        if self.m_star is not None and self.m_star < self.m0:
            raise ConfigError("m_star must be >= m0")

    def resolved_m_star(self, d: int) -> int:
        m_star = self.m_star if self.m_star is not None else max(self.m0, int(round(d / 4)))
        if m_star > d:
            raise ConfigError(f"m_star={m_star} exceeds the number of sites d={d}")
        return m_star

    @classmethod
    def from_dict(cls, d: dict) -> "DeformConfig":
        known = {"method", "q", "m0", "m_star", "seed", "optimizer", "bijectivity_resolution"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown deformation config keys: {sorted(unknown)}")
        opt = d.get("optimizer", {})
        bad = set(opt) - {"max_evals", "xtol", "restarts", "method"}
        if bad:
            raise ConfigError(f"unknown optimizer keys: {sorted(bad)}")
        kw = {k: v for k, v in d.items() if k != "optimizer"}
        return cls(optimizer=OptimizerSettings(**opt), **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DeformationResult:
    """A fitted deformation and its D-plane sites."""

    params: SplineParams
    d_sites: SiteSet
    objective: float
    bijective: bool
    method: str
    status: str = "ok"
    stage_log: list = field(default_factory=list)
    shape_name: str = "kappa"

    def to_dict(self) -> dict:
        return {
            "method": self.method, "objective": self.objective,
            "bijective": self.bijective, "status": self.status,
            "shape_parameter": self.shape_name,
            "params": self.params.to_dict(self.d_sites.ids),
            "d_plane": {sid: [float(x), float(y)]
                        for sid, (x, y) in zip(self.d_sites.ids, self.d_sites.coords)},
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_stage_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "anchor_added", "objective", "bijective", "accepted", "evals"])
            for row in self.stage_log:
                w.writerow([row["stage"], row["anchor_added"], repr(float(row["objective"])),
                            row["bijective"], row["accepted"], row["evals"]])

    def accepted_objectives(self) -> list[float]:
        """Objective after each accepted stage, in order."""
        return [float(r["objective"]) for r in self.stage_log if r["accepted"]]

    def write_sites(self, path) -> None:
        """D-plane sites CSV scaled into the unit square.

        One common factor is used for both axes so that distance ratios, and
        hence every fit with a free range parameter, are unchanged.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y"])
            for sid, (x, y) in zip(self.d_sites.ids, unit_square(self.d_sites.coords)):
                w.writerow([sid, repr(float(x)), repr(float(y))])


def unit_square(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    lo = coords.min(axis=0)
    span = float(np.ptp(coords, axis=0).max())
    return (coords - lo) / (span if span > 0 else 1.0)


def load_deformation(path, g_sites: SiteSet) -> DeformationResult:
    """Read a deformation JSON and rebuild the D-plane sites for ``g_sites``."""
    with open(path) as fh:
        d = json.load(fh)
    params = SplineParams.from_dict(d["params"])
    if "anchor_ids" in d["params"]:
        params.anchors = tuple(g_sites.index(a) for a in d["params"]["anchor_ids"])
    coords = np.array([d["d_plane"][sid] for sid in g_sites.ids], dtype=float)
    return DeformationResult(params=params, d_sites=g_sites.with_coords(coords, "D", "euclidean"),
                             objective=float(d["objective"]), bijective=bool(d["bijective"]),
                             method=d["method"], status=d.get("status", "ok"),
                             shape_name=d.get("shape_parameter", "kappa"))


# ---------------------------------------------------------------------------
# objectives on D-plane coordinates

def _offdiag(mat):
    """Upper and lower triangles in ``pdist`` order."""
    iu, ju = np.triu_indices(mat.shape[0], k=1)
    return mat[iu, ju], mat[ju, iu]


def _frobenius(theory_upper, emp_upper, emp_lower) -> float:
    if not np.all(np.isfinite(theory_upper)):
        return math.inf
    r = np.sum((theory_upper - emp_upper) ** 2) + np.sum((theory_upper - emp_lower) ** 2)
    return float(np.sqrt(r))


def _chi_theory(h, family, kappa, q):
    if family == "chi_br":
        return chi_br(h, kappa, 1.0)
    return chi_ibr(h, kappa, 1.0, q)


def _d_coords(params, g_sites):
    with np.errstate(all="ignore"):
        return deform_points(params, g_sites.coords)


def _check_kind(dm: DependenceMatrix, kind: str):
    if dm.kind != kind:
        raise DomainError(f"expected a {kind} matrix, got {dm.kind}")


def chi_frobenius_objective(params: SplineParams, chi_hat: DependenceMatrix, g_sites: SiteSet,
                            family: str = "chi_br", q: float | None = None) -> float:
    """Frobenius norm over ordered off-diagonal pairs of ``chi(h*) - chi_hat``.

    ``params.kappa`` is the shape of the stationary model; the range is 1.
    ``q`` defaults to the threshold of ``chi_hat``.
    """
    _check_kind(chi_hat, "chi_q")
    if family not in ("chi_br", "chi_ibr"):
        raise DomainError("family must be chi_br or chi_ibr")
    q = chi_hat.threshold_q if q is None else q
    dc = _d_coords(params, g_sites)
    if not np.all(np.isfinite(dc)):
        return math.inf
    up, lo = _offdiag(chi_hat.values)
    return _frobenius(_chi_theory(pdist(dc), family, params.kappa, q), up, lo)


def corr_frobenius_objective(params: SplineParams, rho_hat: DependenceMatrix, g_sites: SiteSet,
                             theta2: float) -> float:
    """Frobenius norm of ``Matern(h*; 1, theta2) - rho_hat`` over off-diagonal pairs."""
    _check_kind(rho_hat, "correlation")
    dc = _d_coords(params, g_sites)
    if not np.all(np.isfinite(dc)):
        return math.inf
    up, lo = _offdiag(rho_hat.values)
    return _frobenius(matern_corr(pdist(dc), 1.0, theta2), up, lo)


def _smith_value(omega, sample, n_obs) -> float:
    try:
        c, low = cho_factor(omega, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        return math.inf
    diag = np.diag(c)
    if np.any(diag <= 0) or diag.min() / diag.max() < 1e-7:
        return math.inf
    logdet = 2.0 * np.sum(np.log(diag))
    tr = np.trace(cho_solve((c, low), sample))
    val = 0.5 * n_obs * logdet + 0.5 * (n_obs - 1) * tr
    return float(val) if np.isfinite(val) else math.inf


def smith_gaussian_objective(params: SplineParams, sample_corr: DependenceMatrix, g_sites: SiteSet,
                             theta2: float, n_obs: int) -> float:
    """``(N/2) log|Omega| + ((N-1)/2) tr(Omega^{-1} Omega_hat)``.

    ``Omega`` is the Matérn(1, ``theta2``) correlation at D-plane distances;
    a numerically singular ``Omega`` gives ``+inf``.
    """
    _check_kind(sample_corr, "correlation")
    dc = _d_coords(params, g_sites)
    if not np.all(np.isfinite(dc)):
        return math.inf
    d = len(g_sites)
    omega = np.ones((d, d))
    iu, ju = np.triu_indices(d, k=1)
    vals = matern_corr(pdist(dc), 1.0, theta2)
    omega[iu, ju] = vals
    omega[ju, iu] = vals
    return _smith_value(omega, sample_corr.values, n_obs)


# ---------------------------------------------------------------------------
# fast evaluator used inside the optimiser

class _Problem:
    """Objective in unconstrained coordinates for a fixed anchor set.

    ``theta = (log b1, log b2, atanh rho, shape, free1..., free2...)`` where
    the shape coordinate is ``logit(kappa / 2)`` for chi methods and
    ``log theta2`` for correlation methods. :meth:`value_and_grad` returns
    the analytic gradient, except for the Matérn smoothness, which is
    differentiated numerically.
    """

    def __init__(self, method, target, g_sites, anchors, q, n_obs):
        self.method = method
        self.g = g_sites
        self.x, self.y = g_sites.coords[:, 0], g_sites.coords[:, 1]
        self.anchors = tuple(anchors)
        self.m = len(anchors)
        self.acoords = g_sites.coords[list(anchors)] if anchors else np.zeros((0, 2))
        self.q = q
        self.log1mq = math.log1p(-q)
        self.n_obs = n_obs
        self.target = target
        self.up, self.lo = _offdiag(target.values)
        d = len(g_sites)
        self.d = d
        self.iu, self.ju = np.triu_indices(d, k=1)
        self.n_evals = 0
        k = self.n_free
        if self.m:
            complete_deltas(np.zeros(self.m - 3), self.acoords)  # collinearity check
            basis = basis_matrix(g_sites.coords, self.acoords)
            c = np.vstack([np.ones(self.m), self.acoords[:, 0], self.acoords[:, 1]])
            head = -np.linalg.solve(c[:, :3], c[:, 3:]) if k else np.zeros((3, 0))
            # site displacement per unit free delta
            self.design = basis[:, :3] @ head + basis[:, 3:]
        else:
            self.design = np.zeros((d, 0))

    @property
    def n_free(self):
        return max(self.m - 3, 0)

    @property
    def is_chi(self):
        return self.method in ("chi_br", "chi_ibr")

    def shape_of(self, t):
        if self.is_chi:
            return float(2.0 * special.expit(t))
        return float(np.exp(np.clip(t, -8.0, 8.0)))

    def shape_to_t(self, s):
        if self.is_chi:
            return float(special.logit(min(max(s / 2.0, 1e-12), 1 - 1e-12)))
        return float(np.log(s))

    def unpack(self, theta) -> SplineParams:
        k = self.n_free
        b1 = float(np.exp(np.clip(theta[0], -30, 30)))
        b2 = float(np.exp(np.clip(theta[1], -30, 30)))
        rho = float(np.tanh(theta[2]))
        shape = self.shape_of(theta[3])
        if self.m:
            return SplineParams.from_free(b1, b2, rho, shape, self.anchors, self.acoords,
                                          theta[4:4 + k], theta[4 + k:4 + 2 * k])
        return SplineParams(b1=b1, b2=b2, rho=rho, kappa=shape)

    def pack(self, p: SplineParams) -> np.ndarray:
        free1 = p.delta1[3:] if p.m >= 3 else np.zeros(0)
        free2 = p.delta2[3:] if p.m >= 3 else np.zeros(0)
        head = [np.log(p.b1), np.log(p.b2), np.arctanh(np.clip(p.rho, -1 + 1e-15, 1 - 1e-15)),
                self.shape_to_t(p.kappa)]
        return np.concatenate([head, free1, free2])

    def _affine(self, theta):
        b1 = math.exp(min(max(theta[0], -30.0), 30.0))
        b2 = math.exp(min(max(theta[1], -30.0), 30.0))
        rho = math.tanh(theta[2])
        return b1, b2, rho, rho * b1 * b2

    def coords(self, theta):
        k = self.n_free
        b1, b2, _, cross = self._affine(theta)
        xs = b1 * b1 * self.x + cross * self.y
        ys = b2 * b2 * self.y + cross * self.x
        if k:
            xs = xs + self.design @ theta[4:4 + k]
            ys = ys + self.design @ theta[4 + k:4 + 2 * k]
        return np.column_stack([xs, ys])

    # theoretical dependence and its derivatives with respect to h and shape
    def _theory(self, h, shape, deriv):
        if self.is_chi:
            a = np.sqrt(2.0 * h ** shape)
            half = a / 2.0
            if self.method == "chi_br":
                val = 2.0 * special.ndtr(-half)
                dval_da = -np.exp(-0.5 * half * half) / math.sqrt(2 * math.pi)
            else:
                val = np.exp(self.log1mq * (2.0 * special.ndtr(half) - 1.0))
                dval_da = val * self.log1mq * np.exp(-0.5 * half * half) / math.sqrt(2 * math.pi)
            if not deriv:
                return val, None, None
            with np.errstate(divide="ignore", invalid="ignore"):
                dh = np.where(h > 0, dval_da * shape * a / (2.0 * h), 0.0)
                dshape = np.where(h > 0, dval_da * a * np.log(h) / 2.0, 0.0)
            return val, dh, float(shape * (1.0 - shape / 2.0)) * dshape
        val = matern_corr(h, 1.0, shape)
        if not deriv:
            return val, None, None
        nu = shape
        x = 2.0 * h * math.sqrt(nu)
        with np.errstate(divide="ignore", invalid="ignore"):
            # d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x)
            log_dx = (nu * np.log(x) + np.log(special.kve(nu - 1.0, x)) - x
                      - (nu - 1.0) * math.log(2.0) - special.gammaln(nu))
            dh = np.where(h > 0, -np.exp(log_dx) * 2.0 * math.sqrt(nu), 0.0)
        step = 1e-7 * nu
        dnu = (matern_corr(h, 1.0, nu + step) - val) / step
        return val, dh, nu * dnu

    def _loss(self, vals, deriv):
        """Objective and its derivative with respect to each pair value."""
        if self.method == "smith_gauss":
            omega = np.ones((self.d, self.d))
            omega[self.iu, self.ju] = vals
            omega[self.ju, self.iu] = vals
            val = _smith_value(omega, self.target.values, self.n_obs)
            if not deriv or not np.isfinite(val):
                return val, None
            inv = np.linalg.inv(omega)
            n = self.n_obs
            g = 0.5 * n * inv - 0.5 * (n - 1) * inv @ self.target.values @ inv
            return val, 2.0 * g[self.iu, self.ju]
        if not np.all(np.isfinite(vals)):
            return math.inf, None
        ru, rl = vals - self.up, vals - self.lo
        val = math.sqrt(float(np.dot(ru, ru) + np.dot(rl, rl)))
        if not deriv:
            return val, None
        return val, (ru + rl) / max(val, 1e-300)

    def __call__(self, theta) -> float:
        self.n_evals += 1
        with np.errstate(all="ignore"):
            dc = self.coords(theta)
            if not np.all(np.isfinite(dc)):
                return math.inf
            vals, _, _ = self._theory(pdist(dc), self.shape_of(theta[3]), False)
            return self._loss(vals, False)[0]

    def value_and_grad(self, theta):
        self.n_evals += 1
        theta = np.asarray(theta, dtype=float)
        grad = np.zeros_like(theta)
        with np.errstate(all="ignore"):
            dc = self.coords(theta)
            if not np.all(np.isfinite(dc)):
                return math.inf, grad
            h = pdist(dc)
            vals, dv_dh, dv_dshape = self._theory(h, self.shape_of(theta[3]), True)
            val, dl_dv = self._loss(vals, True)
            if not np.isfinite(val):
                return math.inf, grad
            w = dl_dv * dv_dh / np.where(h > 0, h, 1.0)
            gx = dc[self.iu, 0] - dc[self.ju, 0]
            gy = dc[self.iu, 1] - dc[self.ju, 1]
            gxs = (np.bincount(self.iu, w * gx, self.d) - np.bincount(self.ju, w * gx, self.d))
            gys = (np.bincount(self.iu, w * gy, self.d) - np.bincount(self.ju, w * gy, self.d))
        b1, b2, rho, cross = self._affine(theta)
        x, y = self.x, self.y
        grad[0] = gxs @ (2 * b1 * b1 * x + cross * y) + gys @ (cross * x)
        grad[1] = gxs @ (cross * y) + gys @ (2 * b2 * b2 * y + cross * x)
        dcross = (1.0 - rho * rho) * b1 * b2
        grad[2] = dcross * (gxs @ y + gys @ x)
        grad[3] = float(dl_dv @ dv_dshape)
        k = self.n_free
        if k:
            grad[4:4 + k] = self.design.T @ gxs
            grad[4 + k:] = self.design.T @ gys
        if not np.all(np.isfinite(grad)):
            return math.inf, np.zeros_like(theta)
        return val, grad


def _nelder_mead(problem, x0, settings: OptimizerSettings):
    """Simplex search, re-run ``restarts`` times from the current best point."""
    best_x, best_f = np.asarray(x0, dtype=float), problem(x0)
    for _ in range(settings.restarts + 1):
        res = optimize.minimize(problem, best_x, method="Nelder-Mead",
                                options={"maxfev": settings.max_evals, "xatol": settings.xtol,
                                         "fatol": 1e-10, "adaptive": best_x.size > 5})
        if res.fun < best_f:
            improvement = best_f - res.fun
            best_x, best_f = res.x, float(res.fun)
            if improvement < 1e-9 * max(1.0, abs(best_f)):
                break
        else:
            break
    return best_x, best_f


def _quasi_newton(problem, x0, settings: OptimizerSettings):
    """L-BFGS with analytic gradients, re-run ``restarts`` times from the best point."""
    best_x = np.asarray(x0, dtype=float)
    best_f = problem(best_x)
    for _ in range(settings.restarts + 1):
        res = optimize.minimize(problem.value_and_grad, best_x, jac=True, method="L-BFGS-B",
                                options={"maxfun": settings.max_evals, "maxiter": settings.max_evals,
                                         "ftol": 1e-12, "gtol": settings.xtol * 1e-2})
        if np.isfinite(res.fun) and res.fun < best_f:
            improvement = best_f - res.fun
            best_x, best_f = res.x, float(res.fun)
            if improvement < 1e-9 * max(1.0, abs(best_f)):
                break
        else:
            break
    return best_x, best_f


def _optimise(problem, x0, settings: OptimizerSettings):
    if settings.method == "nelder-mead":
        return _nelder_mead(problem, x0, settings)
    return _quasi_newton(problem, x0, settings)


def anchor_order(g_sites: SiteSet, seed: int) -> list[int]:
    """Seeded permutation of site indices whose first three are not collinear.

    The order depends only on ``seed`` and the number of sites, so every
    method and every sample drawn on the same sites shares it.
    """
    d = len(g_sites)
    order = list(np.random.default_rng(seed).permutation(d))
    c = g_sites.coords
    for k in range(2, d):
        tri = np.array([c[order[0]], c[order[1]], c[order[k]]])
        area = abs(np.linalg.det(np.column_stack([tri, np.ones(3)])))
        if area > 1e-8 * max(np.ptp(c, axis=0).max(), 1e-300) ** 2:
            order[2], order[k] = order[k], order[2]
            return [int(i) for i in order]
    raise NumericError("all sites are collinear; cannot place thin-plate-spline anchors")


def empirical_target(obs: ObservationMatrix, method: str, q: float = 0.9) -> DependenceMatrix:
    if method in ("chi_br", "chi_ibr"):
        return empirical_chi_matrix(obs, q)
    return empirical_corr_matrix(obs)


def fit_deformation(obs: ObservationMatrix, g_sites: SiteSet, config: DeformConfig,
                    target: DependenceMatrix | None = None) -> DeformationResult:
    """Incremental anchor-point deformation fit.

    Stage 0 optimises the spline with ``m0`` anchors starting from the
    identity map (zero deltas). Each later stage adds the next anchor of
    :func:`anchor_order` with zero deltas, so it starts from the previous
    bijective optimum, and re-optimises everything. A stage whose optimum
    folds is retried with the following candidate anchors, at most
    ``MAX_ANCHOR_RETRIES`` times; after that the last bijective result is
    returned with a warning status.

    ``target`` may carry a precomputed empirical matrix.
    """
    d = len(g_sites)
    if obs.n_sites != d:
        raise ConfigError("observations and sites disagree on the number of sites")
    m_star = config.resolved_m_star(d)
    if target is None:
        target = empirical_target(obs, config.method, config.q)
    order = anchor_order(g_sites, config.seed)
    domain = bounding_box(g_sites.coords)
    res = config.bijectivity_resolution
    shape_name = "kappa" if config.method.startswith("chi") else "theta2"

    anchors = order[: config.m0]
    pool = order[config.m0:]
    stage_log = []
    status = "ok"

    problem = _Problem(config.method, target, g_sites, anchors, config.q, obs.n_obs)
    x0 = np.zeros(4 + 2 * problem.n_free)
    x0[3] = problem.shape_to_t(1.0)
    x, f = _optimise(problem, x0, config.optimizer)
    params = problem.unpack(x)
    bij = check_bijectivity(params, domain, res)
    stage_log.append({"stage": 0, "anchor_added": ";".join(g_sites.ids[i] for i in anchors),
                      "objective": f, "bijective": bij, "accepted": bij, "evals": problem.n_evals})
    best = (problem, x, f)
    if not bij:
        # fall back to the best affine map, which keeps zero deltas on the
        # anchors and is bijective whenever |rho| < 1
        status = "warning: initial anchor set produced a folded map; affine-only fallback"
        warnings.warn(status)
        affine = _Problem(config.method, target, g_sites, (), config.q, obs.n_obs)
        xa, _ = _optimise(affine, x0[:4], config.optimizer)
        xa = np.concatenate([xa, np.zeros(2 * problem.n_free)])
        best = (problem, xa, problem(xa))
        stage_log.append({"stage": 0, "anchor_added": "affine-fallback", "objective": best[2],
                          "bijective": True, "accepted": True, "evals": affine.n_evals})

    stage = 1
    while len(anchors) < m_star and status == "ok":
        prev_problem, prev_x, prev_f = best
        accepted = False
        for attempt in range(MAX_ANCHOR_RETRIES):
            if not pool:
                break
            cand = pool[0]
            trial = anchors + [cand]
            prob = _Problem(config.method, target, g_sites, trial, config.q, obs.n_obs)
            k_old = prev_problem.n_free
            xs = np.concatenate([prev_x[:4], prev_x[4:4 + k_old], [0.0],
                                 prev_x[4 + k_old:4 + 2 * k_old], [0.0]])
            x, f = _optimise(prob, xs, config.optimizer)
            p = prob.unpack(x)
            bij = check_bijectivity(p, domain, res)
            stage_log.append({"stage": stage, "anchor_added": g_sites.ids[cand], "objective": f,
                              "bijective": bij, "accepted": bij, "evals": prob.n_evals})
            if bij:
                anchors, pool = trial, pool[1:]
                best = (prob, x, f)
                accepted = True
                break
            # move the rejected candidate to the back of the queue
            pool = pool[1:] + [cand]
        if not accepted:
            status = (f"warning: no bijective deformation at stage {stage} after "
                      f"{MAX_ANCHOR_RETRIES} anchor candidates; returning {len(anchors)} anchors")
            warnings.warn(status)
            break
        stage += 1

    prob, x, f = best
    params = prob.unpack(x)
    d_coords = deform_points(params, g_sites.coords)
    d_sites = g_sites.with_coords(d_coords, plane="D", metric="euclidean")
    log.info("deformation %s: m=%d objective=%.6g status=%s", config.method, params.m, f, status)
    return DeformationResult(params=params, d_sites=d_sites, objective=float(f),
                             bijective=bool(check_bijectivity(params, domain, res)),
                             method=config.method, status=status, stage_log=stage_log,
                             shape_name=shape_name)
