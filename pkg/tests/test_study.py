from __future__ import annotations

import json

import pytest

from extremal_deformation.deform import DeformConfig, anchor_order
from extremal_deformation.data_model import grid_sites
from extremal_deformation.exceptions import ConfigError
from extremal_deformation.study import (StudyConfig, proportion_table, run_repetition, run_study)

SMALL = {"kind": "br", "grid_side": 4, "n_obs": 300}


def _config(**kw):
    base = dict(process=SMALL, repetitions=2, methods=["chi_br", "corr_frob"], m_star=5,
                master_seed=11)
    base.update(kw)
    return StudyConfig.from_dict(base)


def test_config_defaults_and_errors():
    cfg = _config()
    assert cfg.family == "BR"
    assert StudyConfig.from_dict({"process": {"kind": "gaussian_mixture"}}).family == "IBR"
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({"process": SMALL, "methods": ["nope"]})
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({"process": SMALL, "colour": "red"})
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({"process": SMALL, "repetitions": 0})
    assert StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_repetition_seeds_documented_rule():
    import numpy as np
    cfg = _config(repetitions=3)
    children = np.random.SeedSequence(11).spawn(3)
    assert cfg.repetition_seeds() == [int(c.generate_state(1)[0]) for c in children]


def test_proportion_table():
    recs = [{"winner": "chi_br"}, {"winner": "chi_ibr"}, {"winner": "none"}, {"winner": "chi_br"}]
    rows = {r["method"]: r for r in proportion_table(recs, ["chi_br", "chi_ibr", "smith_gauss"])}
    assert rows["chi_br"]["proportion"] == 0.5 and rows["none"]["proportion"] == 0.25
    assert rows["chi_ibr"]["group_proportion"] == 0.75
    assert rows["smith_gauss"]["wins"] == 0 and rows["smith_gauss"]["label"] == "Smith"


def test_repetition_record():
    cfg = _config()
    rec = run_repetition(cfg, 0)
    assert set(rec["claic"]) == {"none", "chi_br", "corr_frob"}
    assert rec["winner"] == min(rec["claic"], key=rec["claic"].get)
    order = anchor_order(grid_sites(4), cfg.anchor_seed)
    ids = grid_sites(4).ids
    for method, info in rec["deformations"].items():
        assert info["monotone"]
        # all methods draw from the same anchor sequence
        assert info["anchor_ids"][:3] == [ids[i] for i in order[:3]]
        assert set(info["anchor_ids"]) <= {ids[i] for i in order[:info["anchors"] + 5]}
    assert rec == run_repetition(cfg, 0)


def test_run_study_outputs(tmp_path):
    cfg = _config(repetitions=1, methods=["chi_br"])
    res = run_study(cfg, tmp_path)
    assert (tmp_path / "study_config.json").exists()
    lines = (tmp_path / "repetitions.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["rep"] == 0
    table = (tmp_path / "proportions.csv").read_text().splitlines()
    assert table[0] == "method,label,group,wins,proportion,group_proportion"
    assert len(res["table"]) == 2


def test_deform_config_shared_across_methods():
    cfg = _config()
    a, b = cfg.deform_config("chi_br"), cfg.deform_config("smith_gauss")
    assert isinstance(a, DeformConfig) and a.seed == b.seed and a.m_star == b.m_star
