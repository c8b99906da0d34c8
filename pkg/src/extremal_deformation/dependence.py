"""Empirical and parametric pairwise dependence measures.

The parametric forms are evaluated elementwise over numpy arrays of
distances. ``normal_cdf`` and the Matérn function rely on
``scipy.special`` (``ndtr`` and ``kve``), both accurate to well below
1e-12 on the ranges used here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import special

from .data_model import ObservationMatrix, SiteSet, as_scale
from .exceptions import DomainError

KINDS = ("chi_q", "correlation")


@dataclass(frozen=True)
class DependenceMatrix:
    """Symmetric-by-construction (up to estimation) pairwise dependence matrix."""

    values: np.ndarray
    kind: str
    site_ids: tuple[str, ...]
    threshold_q: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"kind must be one of {KINDS}")
        if self.kind == "chi_q" and not (self.threshold_q is not None and 0 < self.threshold_q < 1):
            raise DomainError("chi_q matrices need a threshold_q in (0, 1)")

    @property
    def size(self) -> int:
        return self.values.shape[0]


def normal_cdf(x):
    return special.ndtr(x)


def _check_variogram_params(kappa, lam):
    if not (0 < kappa <= 2):
        raise DomainError(f"kappa must lie in (0, 2], got {kappa}")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")


def _check_h(h):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or np.any(np.isnan(h)):
        raise DomainError("distances must be nonnegative")
    return h


def power_variogram(h, kappa, lam):
    """Semivariogram ``(h / lam) ** kappa``."""
    return (np.asarray(h, dtype=float) / lam) ** kappa


def extremal_coefficient(h, kappa, lam=1.0):
    """Brown-Resnick pairwise extremal coefficient ``2 Phi(sqrt(2 gamma(h)) / 2)``."""
    _check_variogram_params(kappa, lam)
    h = _check_h(h)
    return 2.0 * normal_cdf(np.sqrt(2.0 * power_variogram(h, kappa, lam)) / 2.0)


def chi_br(h, kappa, lam=1.0):
    """Limiting tail dependence of a stationary Brown-Resnick process at lag ``h``."""
    _check_variogram_params(kappa, lam)
    h = _check_h(h)
    # 2 - 2 Phi(x) == 2 Phi(-x) keeps precision in the far tail
    return 2.0 * normal_cdf(-np.sqrt(2.0 * power_variogram(h, kappa, lam)) / 2.0)


def chi_ibr(h, kappa, lam=1.0, q=0.9):
    """Threshold-``q`` tail dependence of a stationary inverted Brown-Resnick process."""
    if not 0 < q < 1:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    theta = extremal_coefficient(h, kappa, lam)
    return (1.0 - q) ** (theta - 1.0)


def matern_corr(h, theta1=1.0, theta2=1.0):
    """Matérn correlation with range ``theta1`` and smoothness ``theta2``.

    Uses the ``2 h sqrt(theta2) / theta1`` scaling; returns 1 at ``h = 0``.
    """
    if not theta1 > 0 or not theta2 > 0:
        raise DomainError(f"Matern parameters must be positive, got ({theta1}, {theta2})")
    h = _check_h(h)
    x = 2.0 * h * np.sqrt(theta2) / theta1
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    # log of x^nu K_nu(x) / (2^(nu-1) Gamma(nu)), with kve = K e^x
    log_val = (theta2 * np.log(xp) + np.log(special.kve(theta2, xp)) - xp
               - (theta2 - 1.0) * np.log(2.0) - special.gammaln(theta2))
    out[pos] = np.exp(log_val)
    return np.minimum(out, 1.0) if out.ndim else float(min(out, 1.0))


def empirical_chi_matrix(obs: ObservationMatrix, q: float) -> DependenceMatrix:
    """Conditional joint exceedance frequencies above the marginal level ``q``.

    Entry ``(i, j)`` is ``#{u_i > q and u_j > q} / #{u_j > q}``; the diagonal is 1.
    """
    if not 0 < q < 1:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    u = as_scale(obs, "uniform").values
    exc = (u > q).astype(float)
    counts = exc.sum(axis=0)
    if np.any(counts == 0):
        bad = [obs.site_ids[i] for i in np.flatnonzero(counts == 0)]
        raise DomainError(f"no exceedances of q={q} at site(s) {bad}")
    chi = (exc.T @ exc) / counts[None, :]
    np.fill_diagonal(chi, 1.0)
    return DependenceMatrix(values=chi, kind="chi_q", site_ids=obs.site_ids, threshold_q=q)


def empirical_corr_matrix(obs: ObservationMatrix) -> DependenceMatrix:
    """Pearson correlation of site-wise Gaussian scores."""
    z = as_scale(obs, "gaussian").values
    rho = np.corrcoef(z, rowvar=False)
    rho = np.clip((rho + rho.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return DependenceMatrix(values=rho, kind="correlation", site_ids=obs.site_ids)


def write_long_csv(path, dm: DependenceMatrix, sites: SiteSet, dist: np.ndarray | None = None) -> None:
    """Write ``id_i, id_j, h, value`` rows for every unordered pair."""
    dist = sites.distances() if dist is None else dist
    iu, ju = np.triu_indices(dm.size, k=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id_i", "id_j", "h", "value"])
        for i, j in zip(iu, ju):
            w.writerow([sites.ids[i], sites.ids[j], repr(float(dist[i, j])),
                        repr(float(dm.values[i, j]))])
