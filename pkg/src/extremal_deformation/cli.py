"""Command-line front end.

::

    extremal-deformation simulate --config process.json --out run/
    extremal-deformation deform   --config deform.json  --out run/
    extremal-deformation fit      --config fit.json     --out run/
    extremal-deformation diagnose --config diag.json    --out run/
    extremal-deformation study    --config study.json   --out run/ --workers 2

Every command reads one JSON config and writes plot-ready CSV/JSON files
into ``--out``. ``--seed`` overrides the config's seed. Exit codes: 0 on
success, 2 for configuration or input errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from scipy import optimize

from .data_model import (METRICS, load_observations, write_observations, write_sites)
from .deform import DeformConfig, empirical_target, fit_deformation, load_deformation
from .dependence import (DependenceMatrix, chi_br, chi_ibr, matern_corr, write_long_csv)
from .diagnostics import (TRANSECTS, condext_table, transect_triples, triple_chi_reports,
                          write_condext_csv, write_triple_csv)
from .exceptions import ConfigError, DomainError, FormatError, NumericError
from .fit import FAMILIES, ModelFit, fit_pairwise_model
from .simulate import ProcessSpec, simulate
from .study import StudyConfig, run_study

log = logging.getLogger("extremal_deformation")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _read_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(base: Path | None, p):
    p = Path(p)
    return p if p.is_absolute() or base is None else base / p


def _pop_data(cfg: dict, base):
    """Remove and load the ``observations``/``sites``/``metric`` keys."""
    for key in ("observations", "sites"):
        if key not in cfg:
            raise ConfigError(f"config needs an {key!r} path")
    metric = cfg.pop("metric", "euclidean")
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}")
    obs_path = _resolve(base, cfg.pop("observations"))
    sites_path = _resolve(base, cfg.pop("sites"))
    return load_observations(obs_path, sites_path, metric=metric)


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=float)


# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path, seed=None) -> None:
    """Write ``observations.csv``, ``sites.csv`` and ``process.json``."""
    spec = ProcessSpec.from_dict(cfg)
    if seed is not None:
        spec.seed = seed
    obs, sites = simulate(spec)
    write_observations(out / "observations.csv", obs)
    write_sites(out / "sites.csv", sites)
    _write_json(out / "process.json", spec.to_dict())


def _curve(method, h, shape, q):
    if method == "chi_br":
        return chi_br(h, shape, 1.0)
    if method == "chi_ibr":
        return chi_ibr(h, shape, 1.0, q)
    return matern_corr(h, 1.0, shape)


def _residual_rms(target: DependenceMatrix, dist, method, q, shape=None):
    """RMS of off-diagonal values around the stationary curve.

    With ``shape=None`` the curve's range and shape are fitted by least
    squares (used for the G-plane); otherwise range 1 and ``shape`` are used.
    """
    iu, ju = np.triu_indices(target.size, k=1)
    vals = np.concatenate([target.values[iu, ju], target.values[ju, iu]])
    h = np.concatenate([dist[iu, ju], dist[iu, ju]])
    if shape is not None:
        return float(np.sqrt(np.mean((_curve(method, h, shape, q) - vals) ** 2)))

    def loss(t):
        s = 2.0 / (1.0 + math.exp(-t[1])) if method.startswith("chi") else math.exp(t[1])
        return float(np.mean((_curve(method, h / math.exp(t[0]), s, q) - vals) ** 2))

    hpos = h[h > 0]
    res = optimize.minimize(loss, [math.log(np.median(hpos)), 0.0], method="Nelder-Mead")
    return float(np.sqrt(res.fun))


def cmd_deform(cfg: dict, out: Path, seed=None, base=None) -> dict:
    """Fit a deformation and write its JSON, D-plane sites, stage log and chi CSVs."""
    cfg = dict(cfg)
    obs, sites = _pop_data(cfg, base)
    config = DeformConfig.from_dict(cfg)
    if seed is not None:
        config.seed = seed
    config.resolved_m_star(len(sites))
    target = empirical_target(obs, config.method, config.q)
    res = fit_deformation(obs, sites, config, target=target)
    res.write_json(out / "deformation.json")
    res.write_sites(out / "d_sites.csv")
    res.write_stage_log(out / "stage_log.csv")
    g_dist, d_dist = sites.distances(), res.d_sites.distances()
    kind = "chi" if config.method.startswith("chi") else "corr"
    write_long_csv(out / f"{kind}_g_plane.csv", target, sites, g_dist)
    write_long_csv(out / f"{kind}_d_plane.csv", target, res.d_sites, d_dist)
    report = {
        "method": config.method, "objective": res.objective, "status": res.status,
        "bijective": res.bijective, "anchors": res.params.m,
        "shape": res.params.kappa, "shape_parameter": res.shape_name,
        "residual_rms_g_plane": _residual_rms(target, g_dist, config.method, config.q),
        "residual_rms_d_plane": _residual_rms(target, d_dist, config.method, config.q,
                                              res.params.kappa),
        "config": config.to_dict(),
    }
    _write_json(out / "deform_report.json", report)
    return report


def _fit_planes(cfg, base, sites):
    planes = {"G": sites}
    if "deformation" in cfg:
        planes["D"] = load_deformation(_resolve(base, cfg.pop("deformation")), sites).d_sites
    return planes


def cmd_fit(cfg: dict, out: Path, seed=None, base=None) -> list[dict]:
    """Fit each family on each plane; writes ``fit_report.json`` and ``.csv``."""
    cfg = dict(cfg)
    obs, sites = _pop_data(cfg, base)
    planes = _fit_planes(cfg, base, sites)
    families = cfg.pop("families", list(FAMILIES))
    wanted = cfg.pop("planes", list(planes))
    u_quantile = cfg.pop("u_quantile", 0.9)
    block_b = cfg.pop("block_b", 1)
    if cfg:
        raise ConfigError(f"unknown fit config keys: {sorted(cfg)}")
    if not 1 <= block_b < obs.n_obs:
        raise ConfigError(f"block_b must satisfy 1 <= b < N={obs.n_obs}")
    missing = [p for p in wanted if p not in planes]
    if missing:
        raise ConfigError(f"plane(s) {missing} requested but no deformation given")
    rows = []
    for plane in wanted:
        for fam in families:
            if fam not in FAMILIES:
                raise ConfigError(f"family must be one of {FAMILIES}")
            fit = fit_pairwise_model(obs, planes[plane], fam, u_quantile=u_quantile,
                                     block_b=block_b)
            row = fit.row()
            row["plane"] = plane
            rows.append(row)
    _write_json(out / "fit_report.json", {"rows": rows})
    with open(out / "fit_report.csv", "w") as fh:
        cols = ["family", "plane", "kappa_hat", "lambda_hat", "ncll", "claic", "u_quantile",
                "block_b", "kappa_at_boundary"]
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) for c in cols) + "\n")
    return rows


def _fit_from_row(row) -> ModelFit:
    return ModelFit(family=row["family"], lambda_hat=row["lambda_hat"],
                    kappa_hat=row["kappa_hat"], ncll=row["ncll"], claic=row["claic"],
                    scores=np.zeros((0, 2)), hessian=np.eye(2),
                    threshold_u=-math.log1p(-row["u_quantile"]), u_quantile=row["u_quantile"],
                    plane=row["plane"], block_b=row.get("block_b", 1))


def cmd_diagnose(cfg: dict, out: Path, seed=None, base=None) -> dict:
    """Triple-chi and conditional-expectation diagnostics for a fitted model.

    Uses the fit-report row with the lowest CLAIC unless ``family``/``plane``
    select one.
    """
    cfg = dict(cfg)
    obs, sites = _pop_data(cfg, base)
    if "fit" not in cfg:
        raise ConfigError("config needs a 'fit' report path")
    with open(_resolve(base, cfg.pop("fit"))) as fh:
        rows = json.load(fh)["rows"]
    planes = _fit_planes(cfg, base, sites)
    fam, plane = cfg.pop("family", None), cfg.pop("plane", None)
    cand = [r for r in rows if (fam is None or r["family"] == fam)
            and (plane is None or r["plane"] == plane)]
    if not cand:
        raise ConfigError("no fit-report row matches the requested family/plane")
    row = min(cand, key=lambda r: r["claic"])
    if row["plane"] not in planes:
        raise ConfigError(f"fit row is on plane {row['plane']} but no deformation was given")
    transect = cfg.pop("transect", "north_south")
    if transect not in TRANSECTS:
        raise ConfigError(f"transect must be one of {TRANSECTS}")
    n_triples = cfg.pop("n_triples", 30)
    mean_block = cfg.pop("K", 14)
    n_boot = cfg.pop("n_boot", 1000)
    q = cfg.pop("q", 0.98)
    u_quantile = cfg.pop("u_quantile", q)
    mc_samples = cfg.pop("mc_samples", 100_000)
    ordered = cfg.pop("ordered_pairs", True)
    seed = cfg.pop("seed", 0) if seed is None else seed
    if cfg:
        raise ConfigError(f"unknown diagnose config keys: {sorted(cfg)}")
    ss = np.random.SeedSequence(seed)
    s_pick, s_boot, s_cond = ss.spawn(3)
    triples = transect_triples(sites, transect, n_triples, seed=s_pick)
    reports = triple_chi_reports(obs, _fit_from_row(row), planes[row["plane"]], triples, q,
                                 mean_block, n_boot, mc_samples, seed=s_boot)
    write_triple_csv(out / "triple_chi.csv", reports)
    cond_rows = condext_table(obs, planes, u_quantile, ordered=ordered, seed=s_cond)
    write_condext_csv(out / "conditional_expectation.csv", cond_rows)
    summary = {"fit_row": row, "n_triples": len(reports),
               "n_pairs": len(cond_rows) // len(planes)}
    _write_json(out / "diagnose_report.json", summary)
    return summary


def cmd_study(cfg: dict, out: Path, seed=None, workers: int = 1) -> dict:
    config = StudyConfig.from_dict(cfg)
    if seed is not None:
        config.master_seed = seed
    return run_study(config, out, workers=workers)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extremal-deformation",
        description="Spatial deformation for non-stationary extremal dependence.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("simulate", "simulate a study process"),
                       ("deform", "fit a thin-plate-spline deformation"),
                       ("fit", "fit stationary BR/IBR models on G- and D-planes"),
                       ("diagnose", "triple-chi and conditional-extremes diagnostics"),
                       ("study", "run a simulation study")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="parallel workers (study)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--kind", choices=("gaussian", "br", "inverted_br", "max_mixture",
                                              "gaussian_mixture"),
                           help="process kind (overrides the config)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _read_config(args.config)
        base = Path(args.config).resolve().parent if args.config else None
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            if args.kind:
                cfg["kind"] = args.kind
            cmd_simulate(cfg, out, args.seed)
        elif args.command == "deform":
            cmd_deform(cfg, out, args.seed, base)
        elif args.command == "fit":
            cmd_fit(cfg, out, args.seed, base)
        elif args.command == "diagnose":
            cmd_diagnose(cfg, out, args.seed, base)
        else:
            cmd_study(cfg, out, args.seed, args.workers)
    except (ConfigError, DomainError, FormatError, OSError, KeyError, TypeError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
