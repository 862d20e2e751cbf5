"""Noisy motion and ranging with the noise-tolerant update gate.

Odometry and range errors grow over time. Updates are accepted only when
the component volumes add up to the set volume within 20% and no
Cayley-Menger determinant has the wrong sign; accepted weights are
renormalised. The run compares the two odometry noise conventions: variance
proportional to the total distance travelled, and to the distance of the
current step.

Usage: python noisy_mobile.py [replicates]
"""

import sys

import numpy as np

from linloc.harness import ExperimentConfig, load_config, run_experiment
from linloc.harness.config import set_path

replicates = int(sys.argv[1]) if len(sys.argv) > 1 else 3
base = set_path(load_config("preset:fig5").to_dict(), "replicates", replicates)
n = base["scene"]["n_agents"]
for basis in ("cumulative", "step"):
    doc = set_path(base, "params.noise_basis", basis)
    rows = run_experiment(ExperimentConfig.from_dict(doc)).per_replicate()
    tail = np.array([row["tail_median_error"] for row in rows])
    print(f"odometry basis {basis:10s}: steady-state ||e|| median {np.median(tail):7.2f} m, "
          f"per agent {np.median(tail) / np.sqrt(n):5.2f} m, "
          f"updates per agent {np.mean([row['updates_per_agent'] for row in rows]):.0f}")
