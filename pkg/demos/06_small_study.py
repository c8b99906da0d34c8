"""A two-repetition version of the simulation study.

Each repetition simulates the non-stationary BR process on 16 sites, builds
all four deformations from the same anchor sequence, fits stationary BR on
every plane and records which plane has the lowest CLAIC. The full-size
studies live in the acceptance tests.

    python demos/06_small_study.py
"""

from __future__ import annotations

import warnings

from extremal_deformation import StudyConfig, run_study

config = StudyConfig.from_dict({
    "process": {"kind": "br", "grid_side": 4, "n_obs": 500},
    "repetitions": 2,
    "m_star": 6,
    "master_seed": 5,
})

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    result = run_study(config)

for rec in result["records"]:
    claic = ", ".join(f"{k} {v:.1f}" for k, v in rec["claic"].items())
    print(f"repetition {rec['rep']}: winner {rec['winner']:12s} CLAIC: {claic}")

print("\nproportion of lowest CLAIC")
for row in result["table"]:
    print(f"  {row['label']:10s} {row['proportion']:.2f}")
