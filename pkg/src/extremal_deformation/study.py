"""Simulation-study driver: deform, fit and rank by CLAIC over repetitions.

Each repetition simulates one sample, builds every requested deformation
from the same anchor sequence, fits the designated stationary family on
the original sites and on every D-plane, and records which plane gives the
lowest CLAIC.

Seeds: repetition ``r`` simulates with the ``r``-th child of
``SeedSequence(master_seed)``; the anchor order uses ``anchor_seed`` for
every repetition and method.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .deform import METHODS, DeformConfig, OptimizerSettings, fit_deformation
from .exceptions import ConfigError, DeformationError
from .fit import fit_pairwise_model
from .simulate import ProcessSpec, simulate

log = logging.getLogger(__name__)

BASELINE = "none"
LABELS = {"none": "None", "chi_br": "chi_BR", "chi_ibr": "chi_IBR_q",
          "corr_frob": "rho", "smith_gauss": "Smith"}
GROUPS = {"chi_br": "chi", "chi_ibr": "chi", "corr_frob": "correlation",
          "smith_gauss": "correlation", "none": "none"}


@dataclass
class StudyConfig:
    """Settings of one scaled simulation study.

    ``family`` defaults to the stationary family matching the process'
    tail class (BR for asymptotically dependent processes, IBR otherwise).
    """

    process: ProcessSpec
    repetitions: int = 10
    methods: list = field(default_factory=lambda: list(METHODS))
    family: str | None = None
    q: float = 0.9
    u_quantile: float = 0.9
    block_b: int = 1
    m0: int = 3
    m_star: int | None = None
    anchor_seed: int = 0
    master_seed: int = 0
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if isinstance(self.process, dict):
            self.process = ProcessSpec.from_dict(self.process)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerSettings(**self.optimizer)
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown deformation methods {bad}")
        if self.family is None:
            self.family = self.process.fitted_family
        if self.family not in ("BR", "IBR"):
            raise ConfigError("family must be BR or IBR")

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown study config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def deform_config(self, method: str) -> DeformConfig:
        return DeformConfig(method=method, q=self.q, m0=self.m0, m_star=self.m_star,
                            seed=self.anchor_seed, optimizer=self.optimizer)

    def repetition_seeds(self) -> list[int]:
        children = np.random.SeedSequence(self.master_seed).spawn(self.repetitions)
        return [int(c.generate_state(1)[0]) for c in children]


def _is_monotone(values, tol=1e-10) -> bool:
    return all(b <= a + tol * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def run_repetition(config: StudyConfig, rep: int, seed: int | None = None) -> dict:
    """One repetition; returns a JSON-ready record."""
    seed = config.repetition_seeds()[rep] if seed is None else seed
    obs, sites = simulate(config.process, seed=seed)
    record = {"rep": rep, "seed": seed, "claic": {}, "fits": [], "deformations": {}}
    planes = {BASELINE: sites}
    for method in config.methods:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = fit_deformation(obs, sites, config.deform_config(method))
        objs = res.accepted_objectives()
        record["deformations"][method] = {
            "objective": res.objective, "anchors": res.params.m,
            "anchor_ids": [sites.ids[i] for i in res.params.anchors], "bijective": res.bijective,
            "status": res.status, "stage_objectives": objs, "monotone": _is_monotone(objs),
            "shape": res.params.kappa,
        }
        planes[method] = res.d_sites
    for name, plane_sites in planes.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_pairwise_model(obs, plane_sites, config.family,
                                     u_quantile=config.u_quantile, block_b=config.block_b)
        row = fit.row()
        row["method"] = name
        record["fits"].append(row)
        record["claic"][name] = fit.claic
    record["winner"] = min(record["claic"], key=record["claic"].get)
    log.info("repetition %d: winner %s", rep, record["winner"])
    return record


def _run_one(args):
    config, rep, seed = args
    return run_repetition(config, rep, seed)


def proportion_table(records: list[dict], methods) -> list[dict]:
    """Rows ``method, label, group, wins, proportion, group_proportion``."""
    names = [BASELINE] + list(methods)
    n = len(records)
    wins = {m: sum(r["winner"] == m for r in records) for m in names}
    group_wins = {}
    for m in names:
        group_wins[GROUPS[m]] = group_wins.get(GROUPS[m], 0) + wins[m]
    return [{"method": m, "label": LABELS[m], "group": GROUPS[m], "wins": wins[m],
             "proportion": wins[m] / n if n else float("nan"),
             "group_proportion": group_wins[GROUPS[m]] / n if n else float("nan")}
            for m in names]


def write_proportion_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def run_study(config: StudyConfig, out_dir=None, workers: int = 1) -> dict:
    """Run all repetitions; flushes each finished repetition to ``out_dir``.

    Returns ``{"records": [...], "table": [...]}``.
    """
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "study_config.json", "w") as fh:
            json.dump(config.to_dict(), fh, indent=2)
    seeds = config.repetition_seeds()
    jobs = [(config, r, seeds[r]) for r in range(config.repetitions)]
    records = []

    def flush(rec):
        records.append(rec)
        if out is not None:
            with open(out / "repetitions.jsonl", "a") as fh:
                fh.write(json.dumps(rec, default=float) + "\n")

    if out is not None and (out / "repetitions.jsonl").exists():
        (out / "repetitions.jsonl").unlink()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_run_one, jobs):
                flush(rec)
    else:
        for job in jobs:
            try:
                flush(_run_one(job))
            except DeformationError:
                log.error("repetition %d failed", job[1])
                raise
    records.sort(key=lambda r: r["rep"])
    table = proportion_table(records, config.methods)
    if out is not None:
        write_proportion_table(out / "proportions.csv", table)
    return {"records": records, "table": table}
