"""Seeded simulators for the stationary and non-stationary study processes.

Randomness: every simulator takes ``seed`` (int, ``SeedSequence`` or
``Generator``) and draws only from ``np.random.default_rng(seed)``.
Composite processes split their seed with ``SeedSequence(seed).spawn(k)``;
child ``i`` always drives component ``i`` (documented per function).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, special
from scipy.spatial.distance import cdist

from .data_model import ObservationMatrix, SiteSet, grid_sites
from .dependence import matern_corr
from .exceptions import ConfigError, DomainError, NumericError

PROCESS_KINDS = ("gaussian", "br", "inverted_br", "max_mixture", "gaussian_mixture")


def psi(coords, centre) -> np.ndarray:
    """Radial stretch ``o + (s - o) ||s - o||`` about ``centre``."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    centre = np.asarray(centre, dtype=float).reshape(1, 2)
    r = np.linalg.norm(coords - centre, axis=1, keepdims=True)
    return centre + (coords - centre) * r


def nonstationary_variogram(s_i, s_j, o, lam, kappa) -> float:
    """``(||psi(s_i) - psi(s_j)|| / lam) ** kappa``."""
    if not lam > 0 or not 0 < kappa <= 2:
        raise DomainError("need lam > 0 and kappa in (0, 2]")
    p = psi(np.vstack([s_i, s_j]), o)
    return float((np.linalg.norm(p[0] - p[1]) / lam) ** kappa)


def _effective_coords(coords, centre):
    return np.asarray(coords, dtype=float) if centre is None else psi(coords, centre)


def variogram_matrix(coords, lam, kappa, centre=None) -> np.ndarray:
    """Semivariogram matrix, non-stationary through ``psi`` when ``centre`` is given."""
    pts = _effective_coords(coords, centre)
    return (cdist(pts, pts) / lam) ** kappa


def matern_matrix(coords, theta1, theta2, centre=None) -> np.ndarray:
    pts = _effective_coords(coords, centre)
    return matern_corr(cdist(pts, pts), theta1, theta2)


def _factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor ``L`` with ``L L^T = cov``; one automatic 1e-10 jitter retry."""
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        pass
    try:
        return linalg.cholesky(cov + 1e-10 * np.eye(cov.shape[0]), lower=True)
    except linalg.LinAlgError:
        raise NumericError("covariance factorisation failed even with 1e-10 jitter; "
                           "check for duplicated or near-duplicated sites") from None


def _unique_rows(coords):
    uniq, inverse = np.unique(np.round(np.asarray(coords, float), 12), axis=0, return_inverse=True)
    return uniq, inverse.ravel()


def simulate_gaussian_values(coords, corr_fn, n, rng) -> np.ndarray:
    """``n`` draws of a unit-variance Gaussian field; duplicated sites share values."""
    uniq, inv = _unique_rows(coords)
    chol = _factor(corr_fn(uniq))
    z = rng.standard_normal((n, uniq.shape[0])) @ chol.T
    return z[:, inv]


def simulate_gaussian(sites: SiteSet, theta1=1.0, theta2=1.2, n=1000, seed=None,
                      centre=None) -> ObservationMatrix:
    """Matérn Gaussian field (ψ-distance when ``centre`` is given); Gaussian scale."""
    rng = np.random.default_rng(seed)
    vals = simulate_gaussian_values(
        sites.coords, lambda c: matern_matrix(c, theta1, theta2, centre), n, rng)
    return ObservationMatrix(values=vals, site_ids=sites.ids, scale="gaussian")


def simulate_br_values(coords, lam, kappa, n, rng, centre=None) -> np.ndarray:
    """Exact simulation of a Brown-Resnick process at finitely many sites.

    Extremal-functions algorithm: for each site ``j`` in turn, Poisson points
    ``zeta`` above the current value at ``j`` are paired with spectral
    functions ``exp(U(s) - U(s_j) - gamma(s, s_j))`` and kept only if they
    do not exceed the running maximum at any earlier site. ``U`` is
    Gaussian with ``U(s_0) = 0``, built from the variogram anchored at the
    first site. All ``n`` replicates advance together.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    d = coords.shape[0]
    gam = variogram_matrix(coords, lam, kappa, centre)
    if d > 1:
        cov = gam[1:, 0][:, None] + gam[0, 1:][None, :] - gam[1:, 1:]
        chol = _factor(cov)
    else:
        chol = np.zeros((0, 0))

    def spectral(count, j):
        u = np.zeros((count, d))
        if d > 1:
            u[:, 1:] = rng.standard_normal((count, d - 1)) @ chol.T
        return np.exp(u - u[:, [j]] - gam[j][None, :])

    z = np.zeros((n, d))
    for j in range(d):
        e = rng.standard_exponential(n)
        if j == 0:
            z[:] = spectral(n, 0) / e[:, None]
            continue
        active = np.flatnonzero(1.0 / e > z[:, j])
        while active.size:
            cand = spectral(active.size, j) / e[active, None]
            ok = np.all(cand[:, :j] < z[active, :j], axis=1)
            rows = active[ok]
            z[rows] = np.maximum(z[rows], cand[ok])
            e[active] += rng.standard_exponential(active.size)
            active = active[1.0 / e[active] > z[active, j]]
    return z


def simulate_br(sites: SiteSet, lam=2.0, kappa=0.8, n=1000, seed=None,
                centre=None) -> ObservationMatrix:
    """Brown-Resnick process on unit Fréchet margins.

    Stationary with semivariogram ``(h / lam) ** kappa`` when ``centre`` is
    None, otherwise the radially stretched non-stationary version.
    """
    if not lam > 0 or not 0 < kappa <= 2:
        raise DomainError("need lam > 0 and kappa in (0, 2]")
    rng = np.random.default_rng(seed)
    vals = simulate_br_values(sites.coords, lam, kappa, n, rng, centre)
    return ObservationMatrix(values=vals, site_ids=sites.ids, scale="frechet")


def invert_process(obs: ObservationMatrix) -> ObservationMatrix:
    """Reciprocal of a Fréchet-scale process: inverted process on exponential margins."""
    if np.any(obs.values <= 0):
        raise DomainError("inversion needs strictly positive values")
    return ObservationMatrix(values=1.0 / obs.values, site_ids=obs.site_ids,
                             scale="exponential", meta=obs.meta)


def gaussian_to_frechet(g: np.ndarray) -> np.ndarray:
    return -1.0 / special.log_ndtr(g)


def simulate_max_mixture(sites: SiteSet, omega=0.3, lam=2.0, kappa=0.8, centre=(0.0, 0.0),
                         theta1=1.0, theta2=1.2, n=1000, seed=None) -> ObservationMatrix:
    """``max(omega X, (1 - omega) Y)`` on unit Fréchet margins.

    ``X`` is the Brown-Resnick component drawn with child seed 0 and ``Y`` a
    Matérn Gaussian field mapped to Fréchet margins, drawn with child seed 1
    of ``SeedSequence(seed)``.
    """
    if not 0 <= omega <= 1:
        raise DomainError("omega must lie in [0, 1]")
    ss_x, ss_y = _spawn(seed, 2)
    x = simulate_br(sites, lam, kappa, n, ss_x, centre).values
    y = gaussian_to_frechet(simulate_gaussian(sites, theta1, theta2, n, ss_y).values)
    h = np.maximum(omega * x, (1.0 - omega) * y)
    return ObservationMatrix(values=h, site_ids=sites.ids, scale="frechet")


def _spawn(seed, k):
    if isinstance(seed, np.random.Generator):
        return seed.spawn(k)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(k)


def _conditional_factor(corr, s0):
    """Mean weights and factor of a unit-variance field conditioned at site ``s0``."""
    keep = np.delete(np.arange(corr.shape[0]), s0)
    c0 = corr[keep, s0]
    cond = corr[np.ix_(keep, keep)] - np.outer(c0, c0)
    return keep, c0, _factor(cond)


def simulate_gaussian_mixture(sites: SiteSet, s0: int, p=0.9, theta_s=(2.0, 1.0),
                              theta_ns=(2.0, 0.8), centre=(0.0, 0.0), n=1000,
                              seed=None) -> ObservationMatrix:
    """Switch between a stationary and a non-stationary Gaussian field.

    For each replicate ``Y(s0) ~ N(0, 1)`` is drawn first; the rest of the
    field comes from the stationary Matérn field ``theta_s`` when
    ``Phi(Y(s0)) <= p`` and from the ψ-distance Matérn field ``theta_ns``
    otherwise, in both cases conditioned on the drawn ``Y(s0)``.
    """
    if not 0 <= p <= 1:
        raise DomainError("p must lie in [0, 1]")
    if not 0 <= s0 < len(sites):
        raise DomainError("s0 must index a site")
    rng = np.random.default_rng(seed)
    coords = sites.coords
    corr_s = matern_matrix(coords, *theta_s)
    corr_ns = matern_matrix(coords, *theta_ns, centre=centre)
    y0 = rng.standard_normal(n)
    eps = rng.standard_normal((n, len(sites) - 1))
    use_s = special.ndtr(y0) <= p
    out = np.empty((n, len(sites)))
    out[:, s0] = y0
    for mask, corr in ((use_s, corr_s), (~use_s, corr_ns)):
        if not mask.any():
            continue
        keep, c0, chol = _conditional_factor(corr, s0)
        out[np.ix_(mask, keep)] = y0[mask, None] * c0[None, :] + eps[mask] @ chol.T
    return ObservationMatrix(values=out, site_ids=sites.ids, scale="gaussian",
                             meta={"stationary_branch": use_s})


@dataclass
class ProcessSpec:
    """Parameters of a study process. Defaults follow the simulation study."""

    kind: str
    n_obs: int = 1000
    grid_side: int | None = None
    lam: float = 2.0
    kappa: float = 0.8
    centre: list | None = field(default_factory=lambda: [0.0, 0.0])
    theta1: float = 1.0
    theta2: float = 1.2
    omega: float = 0.3
    invert: bool = False
    p: float = 0.9
    theta_s: list = field(default_factory=lambda: [2.0, 1.0])
    theta_ns: list = field(default_factory=lambda: [2.0, 0.8])
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise ConfigError(f"unknown process kind {self.kind!r}; expected one of {PROCESS_KINDS}")
        if self.grid_side is None:
            self.grid_side = 9 if self.kind == "gaussian_mixture" else 8
        if self.n_obs < 2:
            raise ConfigError("n_obs must be at least 2")
        if not 0 < self.kappa <= 2 or not self.lam > 0:
            raise ConfigError("need lam > 0 and kappa in (0, 2]")
        if not 0 <= self.omega <= 1 or not 0 <= self.p <= 1:
            raise ConfigError("omega and p must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown process spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def fitted_family(self) -> str:
        """Stationary family matching the process' tail class."""
        if self.kind in ("br",) or (self.kind == "max_mixture" and not self.invert):
            return "BR"
        return "IBR"


def simulate(spec: ProcessSpec, sites: SiteSet | None = None, seed=None):
    """Simulate ``spec`` on its default grid (or ``sites``). Returns ``(obs, sites)``."""
    sites = grid_sites(spec.grid_side) if sites is None else sites
    seed = spec.seed if seed is None else seed
    centre = None if spec.centre is None else tuple(spec.centre)
    n = spec.n_obs
    if spec.kind == "gaussian":
        obs = simulate_gaussian(sites, spec.theta1, spec.theta2, n, seed)
    elif spec.kind == "br":
        obs = simulate_br(sites, spec.lam, spec.kappa, n, seed, centre)
    elif spec.kind == "inverted_br":
        obs = invert_process(simulate_br(sites, spec.lam, spec.kappa, n, seed, centre))
    elif spec.kind == "max_mixture":
        obs = simulate_max_mixture(sites, spec.omega, spec.lam, spec.kappa, centre,
                                   spec.theta1, spec.theta2, n, seed)
        if spec.invert:
            obs = invert_process(obs)
    else:
        origin = np.array(centre if centre is not None else (0.0, 0.0))
        s0 = int(np.argmin(np.linalg.norm(sites.coords - origin, axis=1)))
        obs = simulate_gaussian_mixture(sites, s0, spec.p, tuple(spec.theta_s),
                                        tuple(spec.theta_ns), centre or (0.0, 0.0), n, seed)
    return obs, sites


def render_br_grid(resolution=100, lam=2.0, kappa=0.8, centre=(0.0, 0.0), seed=None,
                   lower=-1.0, upper=1.0):
    """One realisation of the (non-stationary) BR process on a dense square grid.

    Returns ``(coords, values)`` with values on the Gumbel scale ``log Z``.
    Memory grows as ``resolution ** 4``; 100 needs roughly 2 GB.
    """
    sites = grid_sites(resolution, lower, upper)
    rng = np.random.default_rng(seed)
    z = simulate_br_values(sites.coords, lam, kappa, 1, rng, centre)
    return sites.coords, np.log(z[0])
