"""How the radio range drives the mobile algorithm.

Five, ten and twenty agents plus one anchor move in a 20 m box. The table
shows, per radio range, the fraction of agent-steps without any neighbour,
the mean number of updates per agent over 3000 steps and the median error
reduction. A sparse network rarely offers three neighbours at once, so
almost no updates happen; the reference figures (40% idle time for five
agents, 31 / 171 / 422 updates) correspond to a range of roughly 4.5 m.

Usage: python radius_sensitivity.py [replicates]
"""

import sys

import numpy as np

from linloc.harness import ExperimentConfig, load_config, run_experiment
from linloc.harness.config import set_path

replicates = int(sys.argv[1]) if len(sys.argv) > 1 else 5
base = load_config("preset:fig4").to_dict()
base = set_path(base, "replicates", replicates)

print(f"{'r (m)':>6} {'N':>4} {'idle':>6} {'updates/agent':>14} {'median ratio':>13}")
for r in (2.0, 3.0, 4.0, 4.6, 5.0):
    for n in (5, 10, 20):
        doc = set_path(set_path(base, "scene.comm_radius", r), "scene.n_agents", n)
        rows = run_experiment(ExperimentConfig.from_dict(doc)).per_replicate()
        idle = np.mean([row["zero_neighbor_fraction"] for row in rows])
        upd = np.mean([row["updates_per_agent"] for row in rows])
        ratio = np.median([row["error_ratio"] for row in rows])
        print(f"{r:6.1f} {n:4d} {idle:6.2f} {upd:14.1f} {ratio:13.2e}")
