"""Censored pairwise composite likelihood for Brown-Resnick (BR) and inverted
Brown-Resnick (IBR) dependence models, and the composite-likelihood AIC.

All likelihoods are evaluated on standard exponential margins. For BR the
exponential values are mapped to unit Fréchet by ``x = -1/log(1 - exp(-z))``
inside the pair functions, with the Jacobian of that map included in the
density terms.

Bivariate BR exponent with ``a = sqrt(2 gamma(h))`` and
``w = a/2 + log(y/x)/a``, ``v = a - w``::

    V(x, y)  = Phi(w)/x + Phi(v)/y
    V_x      = -Phi(w)/x^2
    V_xy     = -phi(w)/(a x^2 y)
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .data_model import ObservationMatrix, SiteSet, as_scale, rank_transform
from .dependence import power_variogram
from .exceptions import ConfigError, DomainError, NumericError

log = logging.getLogger(__name__)

FAMILIES = ("BR", "IBR")
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
_A_FLOOR = 1e-10
KAPPA_MAX = 2.0
BOUNDARY_TOL = 1e-3


def _a_of(h, lam, kappa):
    return np.maximum(np.sqrt(2.0 * power_variogram(h, kappa, lam)), _A_FLOOR)


def _log_phi(w):
    return -0.5 * w * w - _LOG_SQRT_2PI


def br_exponent(x, y, a):
    """Bivariate Brown-Resnick exponent ``V(x, y)`` on unit Fréchet margins."""
    x, y, a = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (x, y, a)))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = a / 2.0 + np.log(y / x) / a
    v = a - w
    out = special.ndtr(w) / x + special.ndtr(v) / y
    # a == 0: complete dependence
    return np.where(a > 0, out, 1.0 / np.minimum(x, y))


def exp_to_frechet(z):
    """Exact monotone map from standard exponential to unit Fréchet."""
    z = np.asarray(z, dtype=float)
    return -1.0 / np.log1p(-np.exp(-z))


def _log_dfrechet_dz(z, x):
    # dx/dz = x^2 e^{-z} / (1 - e^{-z})
    return 2.0 * np.log(x) - z - np.log1p(-np.exp(-z))


def _check_params(lam, kappa):
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not 0 < kappa <= KAPPA_MAX:
        raise DomainError(f"kappa must lie in (0, 2], got {kappa}")


def br_pair_cdf(z1, z2, lam, kappa, h):
    """Joint CDF of a BR pair at distance ``h``, on exponential margins."""
    _check_params(lam, kappa)
    z1, z2, h = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (z1, z2, h)))
    x1, x2 = exp_to_frechet(z1), exp_to_frechet(z2)
    a = np.sqrt(2.0 * power_variogram(h, kappa, lam))
    out = np.exp(-br_exponent(x1, x2, a))
    return out if out.ndim else float(out)


def ibr_pair_survival(y1, y2, lam, kappa, h):
    """Joint survival function of an IBR pair at distance ``h`` (exponential margins)."""
    _check_params(lam, kappa)
    y1, y2, h = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (y1, y2, h)))
    a = np.sqrt(2.0 * power_variogram(h, kappa, lam))
    with np.errstate(divide="ignore"):
        out = np.exp(-br_exponent(1.0 / y1, 1.0 / y2, a))
    out = np.where((y1 == 0) | (y2 == 0), np.exp(-np.maximum(y1, y2)), out)
    return out if out.ndim else float(out)


def ibr_pair_cdf(y1, y2, lam, kappa, h):
    """Joint CDF of an IBR pair by inclusion-exclusion."""
    s = ibr_pair_survival(y1, y2, lam, kappa, h)
    return 1.0 - np.exp(-np.asarray(y1, float)) - np.exp(-np.asarray(y2, float)) + s


# ---------------------------------------------------------------------------
# vectorised branch log-contributions; ``a`` broadcast against the data

def _br_log_joint(z1, z2, a):
    x1, x2 = exp_to_frechet(z1), exp_to_frechet(z2)
    lx1, lx2 = np.log(x1), np.log(x2)
    w = a / 2.0 + (lx2 - lx1) / a
    v = a - w
    big_v = special.ndtr(w) / x1 + special.ndtr(v) / x2
    term = np.logaddexp(special.log_ndtr(w) + special.log_ndtr(v),
                        lx2 + _log_phi(w) - np.log(a))
    return (-big_v + term - 2.0 * lx1 - 2.0 * lx2
            + _log_dfrechet_dz(z1, x1) + _log_dfrechet_dz(z2, x2))


def _br_log_mixed(z1, u, a):
    """log dF/dz1 at (z1, u) with z1 > u."""
    x1 = exp_to_frechet(z1)
    xu = exp_to_frechet(u)
    lx1 = np.log(x1)
    w = a / 2.0 + (np.log(xu) - lx1) / a
    v = a - w
    big_v = special.ndtr(w) / x1 + special.ndtr(v) / xu
    return -big_v + special.log_ndtr(w) - 2.0 * lx1 + _log_dfrechet_dz(z1, x1)


def _br_log_censored(u, a):
    xu = exp_to_frechet(u)
    return -2.0 * special.ndtr(a / 2.0) / xu


def _ibr_log_joint(y1, y2, a):
    w = a / 2.0 + np.log(y1 / y2) / a
    v = a - w
    big_v = y1 * special.ndtr(w) + y2 * special.ndtr(v)
    term = np.logaddexp(special.log_ndtr(w) + special.log_ndtr(v),
                        _log_phi(w) - np.log(a) - np.log(y2))
    return -big_v + term


def _ibr_log_mixed(y1, u, a):
    """log dF/dy1 at (y1, u) with y1 > u: ``e^{-y1} - S(y1, u) Phi(w)``."""
    w = a / 2.0 + np.log(y1 / u) / a
    v = a - w
    big_v = y1 * special.ndtr(w) + u * special.ndtr(v)
    t = np.minimum(-big_v + y1 + special.log_ndtr(w), 0.0)
    return -y1 + np.log(-np.expm1(t))


def _ibr_log_censored(u, a):
    theta = 2.0 * special.ndtr(a / 2.0)
    return np.log(1.0 - 2.0 * np.exp(-u) + np.exp(-theta * u))


_BRANCHES = {
    "BR": (_br_log_joint, _br_log_mixed, _br_log_censored),
    "IBR": (_ibr_log_joint, _ibr_log_mixed, _ibr_log_censored),
}


def _check_family(family):
    if family not in FAMILIES:
        raise DomainError(f"family must be one of {FAMILIES}, got {family!r}")


def censored_pair_loglik(z_i, z_j, u, family, lam, kappa, h) -> float:
    """Log of one censored pairwise likelihood contribution.

    Both above ``u`` -> joint density; exactly one above -> partial
    derivative of the joint CDF with the other argument at ``u``; neither
    -> ``F(u, u)``.
    """
    _check_family(family)
    _check_params(lam, kappa)
    if not u > 0:
        raise DomainError("threshold u must be positive")
    joint, mixed, cens = _BRANCHES[family]
    a = float(_a_of(h, lam, kappa))
    with np.errstate(all="ignore"):
        if z_i > u and z_j > u:
            branch, val = "joint", joint(np.float64(z_i), np.float64(z_j), a)
        elif z_i > u:
            branch, val = "mixed", mixed(np.float64(z_i), np.float64(u), a)
        elif z_j > u:
            branch, val = "mixed", mixed(np.float64(z_j), np.float64(u), a)
        else:
            branch, val = "censored", cens(np.float64(u), a)
    val = float(val)
    if not np.isfinite(val):
        raise NumericError(f"non-finite {branch} contribution for pair ({z_i}, {z_j}), h={h}")
    return val


class PairData:
    """Branch-sorted data for fast evaluation of the censored pairwise likelihood.

    Parameter-free quantities (margin transforms, Jacobians, logs) are
    computed once per family and reused across evaluations.

    Parameters
    ----------
    z : ``(N, d)`` array on exponential margins
    dist : ``(d, d)`` distance matrix
    u : censoring threshold on the exponential scale
    """

    def __init__(self, z: np.ndarray, dist: np.ndarray, u: float):
        z = np.asarray(z, dtype=float)
        n, d = z.shape
        iu, ju = np.triu_indices(d, k=1)
        self.n_obs, self.n_sites = n, d
        self.u = float(u)
        self.h = np.maximum(dist[iu, ju], 0.0)
        exc = z > u
        ei, ej = exc[:, iu], exc[:, ju]
        t_b, p_b = np.nonzero(ei & ej)
        self.joint = (t_b, p_b, z[t_b, iu[p_b]], z[t_b, ju[p_b]])
        t1, p1 = np.nonzero(ei & ~ej)
        t2, p2 = np.nonzero(ej & ~ei)
        self.mixed = (np.concatenate([t1, t2]), np.concatenate([p1, p2]),
                      np.concatenate([z[t1, iu[p1]], z[t2, ju[p2]]]))
        cens = ~(ei | ej)
        self.cens_counts = cens.sum(axis=0).astype(float)
        self._cens = cens
        self._cache = {}

    @property
    def n_pairs(self) -> int:
        return self.h.size

    def _prepared(self, family):
        if family in self._cache:
            return self._cache[family]
        _, _, z1, z2 = self.joint
        zm = self.mixed[2]
        u = self.u
        if family == "BR":
            x1, x2, xm = exp_to_frechet(z1), exp_to_frechet(z2), exp_to_frechet(zm)
            xu = float(exp_to_frechet(u))
            l1, l2, lm = np.log(x1), np.log(x2), np.log(xm)
            prep = {
                "inv1": 1.0 / x1, "inv2": 1.0 / x2, "dlog": l2 - l1, "l2": l2,
                "cj": (-2.0 * l1 - 2.0 * l2 + _log_dfrechet_dz(z1, x1)
                       + _log_dfrechet_dz(z2, x2)),
                "invm": 1.0 / xm, "dlogm": np.log(xu) - lm,
                "cm": -2.0 * lm + _log_dfrechet_dz(zm, xm), "xu": xu,
            }
        else:
            prep = {"y1": z1, "y2": z2, "dlog": np.log(z1 / z2), "ly2": np.log(z2),
                    "ym": zm, "dlogm": np.log(zm / u)}
        self._cache[family] = prep
        return prep

    def _terms(self, lam, kappa, family):
        c = self._prepared(family)
        a = _a_of(self.h, lam, kappa)
        aj = a[self.joint[1]]
        am = a[self.mixed[1]]
        u = self.u
        with np.errstate(all="ignore"):
            wj = aj / 2.0 + c["dlog"] / aj
            vj = aj - wj
            wm = am / 2.0 + c["dlogm"] / am
            vm = am - wm
            if family == "BR":
                big_v = special.ndtr(wj) * c["inv1"] + special.ndtr(vj) * c["inv2"]
                term = np.logaddexp(special.log_ndtr(wj) + special.log_ndtr(vj),
                                    c["l2"] + _log_phi(wj) - np.log(aj))
                lj = -big_v + term + c["cj"]
                big_vm = special.ndtr(wm) * c["invm"] + special.ndtr(vm) / c["xu"]
                lm = -big_vm + special.log_ndtr(wm) + c["cm"]
                lc = -2.0 * special.ndtr(a / 2.0) / c["xu"]
            else:
                big_v = c["y1"] * special.ndtr(wj) + c["y2"] * special.ndtr(vj)
                term = np.logaddexp(special.log_ndtr(wj) + special.log_ndtr(vj),
                                    _log_phi(wj) - np.log(aj) - c["ly2"])
                lj = -big_v + term
                ym = c["ym"]
                big_vm = ym * special.ndtr(wm) + u * special.ndtr(vm)
                t = np.minimum(-big_vm + ym + special.log_ndtr(wm), 0.0)
                lm = -ym + np.log(-np.expm1(t))
                theta = 2.0 * special.ndtr(a / 2.0)
                lc = np.log(1.0 - 2.0 * np.exp(-u) + np.exp(-theta * u))
        return lj, lm, lc

    def loglik(self, lam: float, kappa: float, family: str, per_obs: bool = False):
        """Composite log-likelihood (scalar) or its ``N`` per-observation terms."""
        lj, lm, lc = self._terms(lam, kappa, family)
        if not per_obs:
            return float(np.sum(lj) + np.sum(lm) + np.dot(self.cens_counts, lc))
        out = np.bincount(self.joint[0], weights=lj, minlength=self.n_obs)
        out += np.bincount(self.mixed[0], weights=lm, minlength=self.n_obs)
        out += self._cens @ lc
        return out


@dataclass
class ModelFit:
    """Result of a censored pairwise composite-likelihood fit."""

    family: str
    lambda_hat: float
    kappa_hat: float
    ncll: float
    claic: float
    scores: np.ndarray
    hessian: np.ndarray
    threshold_u: float
    u_quantile: float
    plane: str = "G"
    block_b: int = 1
    kappa_at_boundary: bool = False
    n_params: int = 2
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "family": self.family, "plane": self.plane,
            "kappa_hat": self.kappa_hat, "lambda_hat": self.lambda_hat,
            "ncll": self.ncll, "claic": self.claic,
            "u_quantile": self.u_quantile, "block_b": self.block_b,
            "kappa_at_boundary": self.kappa_at_boundary,
        }


_KAPPA_MIN = 0.02


_GRAD_TOL = 1e-3


def _projected_grad(jac, x, bounds):
    g = np.array(jac, dtype=float)
    for k, (lo, hi) in enumerate(bounds):
        if (lo is not None and x[k] <= lo and g[k] > 0) or (hi is not None and x[k] >= hi and g[k] < 0):
            g[k] = 0.0
    return float(np.max(np.abs(g)))


def _lbfgs(fun, x0, bounds):
    """Bounded quasi-Newton search with a simplex polish.

    L-BFGS-B can stop on a failed line search when its first step lands
    where the likelihood is degenerate; if the projected gradient at its
    exit point is not small, a bounded Nelder-Mead run continues from there.
    """
    res = optimize.minimize(fun, x0, method="L-BFGS-B", bounds=bounds,
                            options={"eps": 1e-7, "ftol": 1e-12, "gtol": 1e-6,
                                     "maxiter": 200})
    if res.fun < 1e300 and _projected_grad(res.jac, res.x, bounds) <= _GRAD_TOL:
        return res
    nm = optimize.minimize(fun, res.x if res.fun < 1e300 else x0, method="Nelder-Mead",
                           bounds=bounds, options={"xatol": 1e-7, "fatol": 1e-10,
                                                   "maxfev": 600})
    nm.jac = optimize.approx_fprime(nm.x, fun, 1e-7)
    nm.success = bool(nm.success or _projected_grad(nm.jac, nm.x, bounds) <= _GRAD_TOL)
    return nm


def _free_param_vector(lam, kappa, fixed_kappa):
    return np.array([lam]) if fixed_kappa is not None else np.array([lam, kappa])


def numerical_scores(pd: PairData, family, params, rel_step=1e-5):
    """``N x k`` per-observation score vectors by central differences."""
    params = np.asarray(params, dtype=float)
    k = params.size
    out = np.empty((pd.n_obs, k))
    for j in range(k):
        step = rel_step * max(abs(params[j]), 1e-3)
        up, dn = params.copy(), params.copy()
        up[j] += step
        dn[j] -= step
        if k == 2 and j == 1 and up[1] > KAPPA_MAX:
            # one-sided at the kappa upper bound
            up[1] = params[1]
            dn[1] = params[1] - 2 * step
        lu = pd.loglik(*_pad(up), family, per_obs=True)
        ld = pd.loglik(*_pad(dn), family, per_obs=True)
        out[:, j] = (lu - ld) / (up[j] - dn[j])
    return out


def _pad(params):
    return (params[0], params[1]) if params.size == 2 else (params[0], KAPPA_MAX)


def numerical_hessian(pd: PairData, family, params, rel_step=1e-4):
    """Hessian of the negative composite log-likelihood by central differences."""
    params = np.asarray(params, dtype=float)
    k = params.size
    steps = np.array([rel_step * max(abs(p), 1e-3) for p in params])
    if k == 2 and params[1] + steps[1] > KAPPA_MAX:
        # shift the stencil inside the admissible range
        centre = params.copy()
        centre[1] = KAPPA_MAX - steps[1]
    else:
        centre = params

    def f(p):
        return -pd.loglik(*_pad(p), family)

    f0 = f(centre)
    hess = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        hess[i, i] = (f(centre + ei) - 2 * f0 + f(centre - ei)) / steps[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = steps[j]
            val = (f(centre + ei + ej) - f(centre + ei - ej)
                   - f(centre - ei + ej) + f(centre - ei - ej)) / (4 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    return hess


def score_variance(scores: np.ndarray, block_b: int) -> np.ndarray:
    """Block estimate ``(N / b) * var(block sums)`` of the score variance."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if not 1 <= block_b < n:
        raise ConfigError(f"block size must satisfy 1 <= b < N={n}, got {block_b}")
    n_blocks = n // block_b
    if n_blocks < 2:
        raise ConfigError("need at least two complete blocks to estimate the score variance")
    sums = scores[: n_blocks * block_b].reshape(n_blocks, block_b, -1).sum(axis=1)
    return (n / block_b) * np.atleast_2d(np.cov(sums, rowvar=False))


def claic(fit: ModelFit, block_b: int = 1, ridge: bool = False) -> float:
    """``2 ncll + 2 tr(J H^{-1})`` with ``J`` from blocked score sums."""
    j_hat = score_variance(fit.scores, block_b)
    hess = np.atleast_2d(fit.hessian)
    if ridge:
        hess = hess + 1e-8 * np.eye(hess.shape[0])
    if not np.all(np.isfinite(hess)) or np.linalg.cond(hess) > 1e14:
        raise NumericError("Hessian is singular; use more observations or ridge=True "
                           "(adds 1e-8 to the diagonal)")
    penalty = float(np.trace(j_hat @ np.linalg.inv(hess)))
    return 2.0 * fit.ncll + 2.0 * penalty


def _initial_lambda(h):
    h = h[h > 0]
    return float(np.median(h)) if h.size else 1.0


def fit_pairwise_model(obs: ObservationMatrix, sites: SiteSet, family: str,
                       u_quantile: float = 0.9, block_b: int = 1,
                       margins: str = "empirical", restarts: int = 4,
                       pair_data: PairData | None = None) -> ModelFit:
    """Maximise the censored pairwise likelihood over ``(lambda, kappa)``.

    Parameters
    ----------
    obs : observations; rank-transformed to exponential margins unless
        ``margins == "as_is"`` and they are already exponential.
    sites : site coordinates (G- or D-plane) defining pair distances.
    family : ``"BR"`` or ``"IBR"``.
    u_quantile : marginal quantile used as censoring threshold.
    block_b : block length for the score-variance estimate in the CLAIC.
    restarts : further starting points tried while the bounded quasi-Newton
        search fails to converge.

    A ``kappa`` estimate within ``BOUNDARY_TOL`` of 2 is pinned at 2, ``lambda``
    is refitted alone and the fit is flagged ``kappa_at_boundary``.
    """
    _check_family(family)
    if not 0 < u_quantile < 1:
        raise DomainError("u_quantile must lie in (0, 1)")
    if len(sites) != obs.n_sites:
        raise ConfigError("sites and observations disagree on the number of sites")
    if not 1 <= block_b < obs.n_obs:
        raise ConfigError(f"block size must satisfy 1 <= b < N={obs.n_obs}")
    u = -np.log1p(-u_quantile)
    if pair_data is None:
        if margins == "as_is":
            z = as_scale(obs, "exponential").values
        else:
            z = rank_transform(obs, "exponential").values
        pair_data = PairData(z, sites.distances(), u)

    pd = pair_data
    n = float(pd.n_obs)

    def nll(theta):
        # theta = (log lambda, kappa); scaled by 1/N for a well-conditioned search
        val = -pd.loglik(float(np.exp(theta[0])), float(theta[1]), family) / n
        return val if np.isfinite(val) else 1e300

    hpos = pd.h[pd.h > 0]
    lam0 = _initial_lambda(pd.h)
    lo, hi = np.log(hpos.min()) - 3.0, np.log(hpos.max()) + 3.0
    bounds = [(lo, hi), (_KAPPA_MIN, KAPPA_MAX)]
    starts = [np.array([np.log(lam0), 1.0]),
              np.array([np.log(lam0 * 3), 0.5]),
              np.array([np.log(lam0 / 3), 1.5])]
    starts += [np.array([np.log(lam0) + 2 * k, 1.0 + 0.4 * (-1) ** k]) for k in range(1, 10)]
    best = None
    trace = []
    for x0 in starts[: max(restarts, 0) + 1]:
        res = _lbfgs(nll, x0, bounds)
        trace.append((res.x.tolist(), float(res.fun), bool(res.success), res.message))
        if best is None or res.fun < best.fun:
            best = res
        if best.success and np.isfinite(best.fun) and best.fun < 1e300:
            break
    if best is None or not best.fun < 1e300:
        raise NumericError(f"composite likelihood optimisation failed: {trace}")
    if not best.success:
        raise NumericError(f"composite likelihood optimisation did not converge "
                           f"after {len(trace)} start(s): {trace}")

    lam_hat, kappa_hat = float(np.exp(best.x[0])), float(best.x[1])
    fixed_kappa = None
    at_boundary = kappa_hat > KAPPA_MAX - BOUNDARY_TOL
    if at_boundary:
        fixed_kappa = KAPPA_MAX
        res1 = optimize.minimize_scalar(
            lambda t: nll(np.array([t, KAPPA_MAX])),
            bounds=(best.x[0] - 1.0, best.x[0] + 1.0), method="bounded",
            options={"xatol": 1e-9})
        lam_hat, kappa_hat = float(np.exp(res1.x)), KAPPA_MAX
        ncll = float(res1.fun) * n
    else:
        ncll = float(best.fun) * n

    params = _free_param_vector(lam_hat, kappa_hat, fixed_kappa)
    scores = numerical_scores(pd, family, params)
    hess = numerical_hessian(pd, family, params)
    fit = ModelFit(family=family, lambda_hat=lam_hat, kappa_hat=kappa_hat, ncll=ncll,
                   claic=np.nan, scores=scores, hessian=hess, threshold_u=float(u),
                   u_quantile=u_quantile, plane=sites.plane, block_b=block_b,
                   kappa_at_boundary=bool(at_boundary), n_params=params.size,
                   converged=bool(best.success), extra={"trace": trace})
    try:
        fit.claic = claic(fit, block_b)
    except NumericError:
        warnings.warn("singular Hessian at the optimum; CLAIC computed with ridge 1e-8")
        fit.claic = claic(fit, block_b, ridge=True)
        fit.extra["ridge"] = True
    return fit
