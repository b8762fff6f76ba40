"""Steady convergence study on the channelized media.

Runs the study harness on a reduced version of configs/experiment1.cfg
(fine grid 1/64, H = 1/4, 1/8) and prints the error table. Pass --full to
run the shipped configuration (H = 1/4, 1/8, 1/16 on 1/128; several
minutes).

    python demos/03_steady_convergence.py [--full]
"""

import sys
from pathlib import Path

from dualcem.analysis import CSV_COLUMNS, run_convergence_study
from dualcem.config import load_config

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "experiment1.cfg")
if "--full" not in sys.argv:
    cfg.grid.n_coarse = [4, 8]
    cfg.grid.n_fine = 64

rows = run_convergence_study(cfg)
print(" | ".join(CSV_COLUMNS))
for r in rows:
    print(" | ".join(map(str, r.csv_row())))
print("\nLambda per row:", ", ".join(f"{r.Lambda:.3g}" for r in rows))
