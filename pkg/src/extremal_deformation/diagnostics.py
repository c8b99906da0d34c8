"""Post-fit diagnostics: triple-wise tail dependence with stationary-bootstrap
intervals, and pairwise conditional-extremes expectations.

Triple-wise chi of a Brown-Resnick model::

    chi(i, j, k) = 3 - V2(i, j) - V2(i, k) - V2(j, k) + V3(1, 1, 1)

with ``V2`` the pairwise extremal coefficient and ``V3`` the trivariate
exponent at ``(1, 1, 1)``, estimated by Monte Carlo with a reported standard
error. For the inverted model ``chi_q = (1 - q) ** (V3 - 1)``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .data_model import ObservationMatrix, SiteSet, as_scale
from .dependence import extremal_coefficient, power_variogram
from .exceptions import DomainError, NumericError
from .fit import ModelFit

log = logging.getLogger(__name__)


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


TRANSECTS = ("north_south", "east_west")
MIN_CONDEXT_EXCEEDANCES = 10


# ---------------------------------------------------------------------------
# triple-wise chi

def _exceedances(obs: ObservationMatrix, q: float) -> np.ndarray:
    if not 0 < q < 1:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    return as_scale(obs, "uniform").values > q


def _triple_ratio(ei, ej, ek) -> float:
    denom = np.count_nonzero(ek)
    if denom == 0:
        raise DomainError("no exceedances at the conditioning site")
    return np.count_nonzero(ei & ej & ek) / denom


def triple_chi_empirical(obs: ObservationMatrix, i: int, j: int, k: int, q: float) -> float:
    """``P(U_i > q, U_j > q | U_k > q)`` with rank-based margins."""
    if len({i, j, k}) != 3:
        raise DomainError("triple sites must be distinct")
    exc = _exceedances(obs.columns([i, j, k]), q)
    return _triple_ratio(exc[:, 0], exc[:, 1], exc[:, 2])


@dataclass
class TripleChiTheory:
    value: float
    v3: float
    v3_se: float
    status: str = "ok"


def _brown_resnick_v3(dist, lam, kappa, n, rng) -> tuple[float, float]:
    """Monte-Carlo ``V3(1, 1, 1)`` from the extremal-function identity.

    ``V3 = sum_l P(l is the first argmax of W)``; under the tilt by ``W_l``
    the log-ratios ``log W_m - log W_l`` are Gaussian with mean
    ``-gamma(m, l)`` and covariance ``gamma(m, l) + gamma(m', l) - gamma(m, m')``.
    Each term is a probability, so the estimator stays well behaved for
    distant sites. ``dist`` is the ``3 x 3`` distance matrix.
    """
    gam = power_variogram(dist, kappa, lam)
    p = dist.shape[0]
    total, var = 0.0, 0.0
    for l in range(p):
        others = [m for m in range(p) if m != l]
        g_l = gam[l, others]
        cov = g_l[:, None] + g_l[None, :] - gam[np.ix_(others, others)]
        evals, evecs = np.linalg.eigh(cov)
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        log_ratio = rng.standard_normal((n, p - 1)) @ root.T - g_l
        # ties are broken towards the lower index
        ok = np.ones(n, dtype=bool)
        for col, m in enumerate(others):
            ok &= (log_ratio[:, col] < 0) if m < l else (log_ratio[:, col] <= 0)
        prob = ok.mean()
        total += prob
        var += prob * (1.0 - prob) / n
    return float(total), float(math.sqrt(var))


def triple_chi_theoretical(fit: ModelFit, sites: SiteSet, i: int, j: int, k: int,
                           q: float | None = None, mc_samples: int = 100_000,
                           seed=None, se_tol: float = 5e-3) -> TripleChiTheory:
    """Model-implied triple-wise chi under the fitted stationary model.

    ``sites`` are the sites the model was fitted on (G- or D-plane); their
    metric defines the distances. ``q`` defaults to the fit's censoring
    quantile and only matters for the inverted family.
    """
    if mc_samples < 100_000:
        raise DomainError("mc_samples must be at least 1e5")
    lam, kappa = fit.lambda_hat, fit.kappa_hat
    dist = sites.subset([i, j, k]).distances()
    rng = np.random.default_rng(seed)
    v3, se = _brown_resnick_v3(dist, lam, kappa, mc_samples, rng)
    status = "ok"
    if se > se_tol:
        status = f"warning: Monte-Carlo standard error {se:.3g} exceeds {se_tol:g}"
        warnings.warn(status)
    if fit.family == "BR":
        v2 = extremal_coefficient(dist[[0, 0, 1], [1, 2, 2]], kappa, lam)
        value = 3.0 - float(np.sum(v2)) + v3
    else:
        q = fit.u_quantile if q is None else q
        value = (1.0 - q) ** (v3 - 1.0)
    return TripleChiTheory(value=float(value), v3=v3, v3_se=se, status=status)


def stationary_bootstrap_indices(n: int, mean_block: float, n_boot: int, rng) -> np.ndarray:
    """``(n_boot, n)`` resampling indices of the stationary bootstrap.

    Each series is a concatenation of blocks of consecutive (circularly
    wrapped) times with geometric lengths of mean ``mean_block`` and uniform
    start times, cut at length ``n``. Generated position by position: a new
    block starts with probability ``1 / mean_block``.
    """
    if mean_block < 1:
        raise DomainError("mean block size K must be >= 1")
    new = rng.random((n_boot, n)) < 1.0 / mean_block
    new[:, 0] = True
    starts = rng.integers(0, n, size=(n_boot, n))
    pos = np.arange(n)
    block_first = np.maximum.accumulate(np.where(new, pos, 0), axis=1)
    start_val = np.take_along_axis(starts, block_first, axis=1)
    return (start_val + pos - block_first) % n


def stationary_bootstrap_ci(obs: ObservationMatrix, i: int, j: int, k: int, q: float,
                            mean_block: float = 14, n_boot: int = 1000,
                            levels=(0.025, 0.975), seed=None) -> tuple[float, float]:
    """Percentile interval of the triple-wise chi under the stationary bootstrap.

    Exceedance indicators are fixed from the full-sample ranks and resampled
    jointly across the three sites; resamples without a conditioning
    exceedance are dropped.
    """
    if n_boot < 100:
        raise DomainError("n_boot must be at least 100")
    exc = _exceedances(obs.columns([i, j, k]), q)
    joint = exc[:, 0] & exc[:, 1] & exc[:, 2]
    cond = exc[:, 2]
    idx = stationary_bootstrap_indices(obs.n_obs, mean_block, n_boot, np.random.default_rng(seed))
    num = joint[idx].sum(axis=1)
    den = cond[idx].sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        stats = np.where(den > 0, num / den, np.nan)
    lo, hi = np.nanquantile(stats, levels)
    return float(lo), float(hi)


@dataclass
class TripleChiReport:
    sites: tuple
    empirical: float
    ci_low: float
    ci_high: float
    theoretical: float
    theoretical_se: float
    q: float
    status: str = "ok"


def transect_triples(sites: SiteSet, transect: str = "north_south", n_triples: int = 30,
                     seed=None, rel_tol: float = 0.25) -> list[tuple[int, int, int]]:
    """Random sets of three adjacent sites along a grid transect.

    Sites sharing (approximately) an x-coordinate form north/south lines,
    sites sharing a y-coordinate east/west lines. Consecutive runs of three
    whose two gaps equal the typical grid spacing within ``rel_tol`` are
    candidates; ``n_triples`` are drawn without replacement (all if fewer).
    Triples are returned as ``(first, last, middle)`` so the middle site is
    the conditioning site.
    """
    if transect not in TRANSECTS:
        raise DomainError(f"transect must be one of {TRANSECTS}")
    c = sites.coords
    fixed, along = (0, 1) if transect == "north_south" else (1, 0)
    gaps_all = np.diff(np.unique(np.round(c[:, along], 9)))
    spacing = float(np.median(gaps_all)) if gaps_all.size else 0.0
    line_tol = 0.5 * spacing if spacing > 0 else 1e-9
    order = np.argsort(c[:, fixed], kind="stable")
    lines, cur = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if abs(c[b, fixed] - c[a, fixed]) <= line_tol * 0.5:
            cur.append(b)
        else:
            lines.append(cur)
            cur = [b]
    lines.append(cur)
    cands = []
    for line in lines:
        line = sorted(line, key=lambda s: c[s, along])
        for a, b, d in zip(line, line[1:], line[2:]):
            g1, g2 = c[b, along] - c[a, along], c[d, along] - c[b, along]
            if abs(g1 - spacing) <= rel_tol * spacing and abs(g2 - spacing) <= rel_tol * spacing:
                cands.append((int(a), int(d), int(b)))
    if not cands:
        raise DomainError(f"no adjacent {transect} triples found on this site layout")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(cands), size=min(n_triples, len(cands)), replace=False)
    return [cands[p] for p in sorted(pick)]


def triple_chi_reports(obs: ObservationMatrix, fit: ModelFit, fit_sites: SiteSet, triples,
                       q: float, mean_block: float = 14, n_boot: int = 1000,
                       mc_samples: int = 100_000, seed=None) -> list[TripleChiReport]:
    """Empirical, bootstrap-interval and model triple chi for every triple."""
    ss = _seed_sequence(seed)
    out = []
    for (i, j, k), child in zip(triples, ss.spawn(len(triples))):
        s_boot, s_mc = child.spawn(2)
        emp = triple_chi_empirical(obs, i, j, k, q)
        lo, hi = stationary_bootstrap_ci(obs, i, j, k, q, mean_block, n_boot, seed=s_boot)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            th = triple_chi_theoretical(fit, fit_sites, i, j, k, q, mc_samples, seed=s_mc)
        out.append(TripleChiReport(sites=(fit_sites.ids[i], fit_sites.ids[j], fit_sites.ids[k]),
                                   empirical=emp, ci_low=lo, ci_high=hi,
                                   theoretical=th.value, theoretical_se=th.v3_se, q=q,
                                   status=th.status))
    return out


def write_triple_csv(path, reports: list[TripleChiReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id_i", "id_j", "id_k", "q", "empirical", "ci_low", "ci_high",
                    "theoretical", "theoretical_se", "status"])
        for r in reports:
            w.writerow([*r.sites, r.q, repr(r.empirical), repr(r.ci_low), repr(r.ci_high),
                        repr(r.theoretical), repr(r.theoretical_se), r.status])


# ---------------------------------------------------------------------------
# pairwise conditional extremes

@dataclass
class CondExtFit:
    """Pairwise conditional-extremes fit of ``X_j | X_i = x > u``.

    ``X_j = alpha x + x^beta Z`` with ``Z ~ N(mu, sigma^2)`` as a working model.
    """

    alpha: float
    beta: float
    mu: float
    sigma: float
    threshold_u: float
    pair: tuple
    n_exceed: int = 0
    nll: float = float("nan")
    at_boundary: dict = field(default_factory=dict)


_SIGMA_FLOOR = 1e-8
_BETA_MAX = 1.0 - 1e-6


def _condext_nll(theta, x, y, logx):
    """Gaussian working negative log-likelihood and its gradient."""
    alpha, beta, mu, log_sigma = theta
    sigma = math.exp(log_sigma)
    xmb = np.exp(-beta * logx)
    scaled = (y - alpha * x) * xmb / sigma
    r = scaled - mu / sigma
    val = float(np.sum(beta * logx + log_sigma + 0.5 * r * r))
    grad = np.array([
        -float(np.sum(r * x * xmb)) / sigma,
        float(np.sum(logx * (1.0 - r * scaled))),
        -float(np.sum(r)) / sigma,
        float(np.sum(1.0 - r * r)),
    ])
    return val, grad


def fit_condext_pair(z: np.ndarray, i: int, j: int, u_quantile: float = 0.95,
                     restarts: int = 5, seed=None, pair_ids=None) -> CondExtFit:
    """Fit the conditional model of column ``j`` given column ``i`` above ``u``.

    ``z`` is an ``(N, d)`` array on exponential margins; ``u`` is the
    ``u_quantile`` exponential quantile. Bounded L-BFGS over
    ``(alpha, beta, mu, log sigma)`` from a moment-based start plus
    ``restarts`` random starts; the best optimum is kept.
    """
    if not 0 < u_quantile < 1:
        raise DomainError("u_quantile must lie in (0, 1)")
    z = np.asarray(z, dtype=float)
    u = -math.log1p(-u_quantile)
    mask = z[:, i] > u
    n_exc = int(np.count_nonzero(mask))
    if n_exc < MIN_CONDEXT_EXCEEDANCES:
        raise DomainError(f"only {n_exc} exceedances of u at site {i}; need at least "
                          f"{MIN_CONDEXT_EXCEEDANCES}")
    x, y = z[mask, i], z[mask, j]
    bounds = [(0.0, 1.0), (0.0, _BETA_MAX), (None, None),
              (math.log(_SIGMA_FLOOR), math.log(10.0 * (np.std(y) + 1.0) * x.max()))]
    a0 = float(np.clip(np.sum(x * y) / np.sum(x * x), 0.0, 1.0))
    res0 = y - a0 * x
    starts = [np.array([a0, 0.0, float(res0.mean()), math.log(max(res0.std(), 1e-3))])]
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        starts.append(np.array([rng.uniform(0, 1), rng.uniform(0, 0.9), rng.normal(0, 1),
                                math.log(rng.uniform(0.1, 2.0))]))
    best = None
    for x0 in starts:
        with np.errstate(all="ignore"):
            res = optimize.minimize(_condext_nll, x0, args=(x, y, np.log(x)), jac=True,
                                    method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise NumericError(f"conditional-extremes fit failed for pair ({i}, {j})")
    alpha, beta, mu, log_sigma = best.x
    flags = {"alpha": bool(alpha <= 1e-6 or alpha >= 1 - 1e-6),
             "beta": bool(beta <= 1e-6 or beta >= _BETA_MAX - 1e-6),
             "sigma": bool(log_sigma <= math.log(_SIGMA_FLOOR) + 1e-6)}
    return CondExtFit(alpha=float(alpha), beta=float(beta), mu=float(mu),
                      sigma=float(math.exp(log_sigma)), threshold_u=u,
                      pair=tuple(pair_ids) if pair_ids is not None else (i, j),
                      n_exceed=n_exc, nll=float(best.fun), at_boundary=flags)


def condext_expectation(fit: CondExtFit, u: float | None = None) -> float:
    """``alpha u + u^beta mu``, the conditional mean of ``X_j`` given ``X_i = u``."""
    u = fit.threshold_u if u is None else u
    return fit.alpha * u + u ** fit.beta * fit.mu


def condext_table(obs: ObservationMatrix, planes: dict, u_quantile: float = 0.95,
                  ordered: bool = True, restarts: int = 5, seed=None) -> list[dict]:
    """Conditional expectations for every site pair, against distance on each plane.

    ``planes`` maps a plane label to a :class:`SiteSet`. Distances on each
    plane are divided by that plane's mean pairwise distance so the planes
    share the same average distance.
    """
    z = as_scale(obs, "exponential").values
    d = obs.n_sites
    pairs = [(a, b) for a in range(d) for b in range(d) if a != b and (ordered or a < b)]
    ss = _seed_sequence(seed)
    expect = {}
    for (a, b), child in zip(pairs, ss.spawn(len(pairs))):
        f = fit_condext_pair(z, a, b, u_quantile, restarts, seed=child)
        expect[(a, b)] = (condext_expectation(f), f)
    rows = []
    for label, sites in planes.items():
        dist = sites.distances()
        iu = np.triu_indices(d, k=1)
        scale = float(dist[iu].mean())
        for (a, b) in pairs:
            e, f = expect[(a, b)]
            rows.append({"id_i": obs.site_ids[a], "id_j": obs.site_ids[b], "plane": label,
                         "h": float(dist[a, b] / scale), "expectation": float(e),
                         "alpha": f.alpha, "beta": f.beta, "mu": f.mu, "sigma": f.sigma})
    return rows


def write_condext_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id_i", "id_j", "plane", "h", "expectation",
                                           "alpha", "beta", "mu", "sigma"])
        w.writeheader()
        for r in rows:
            w.writerow(r)
