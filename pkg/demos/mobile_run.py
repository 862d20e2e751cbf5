"""Mobile agents with one mobile anchor.

Agents and the anchor wander by random waypoint steps. An agent that finds
a triangulation set among its current neighbours mixes its estimate with
theirs; otherwise it dead-reckons. Without noise the error evolves as a
product of the per-step matrices, and it shrinks whenever anchor
information reaches an agent, possibly relayed through other agents.
"""

import numpy as np

from linloc import mobile, scene

N, SIDE, RADIUS, STEPS = 20, 20.0, 4.6, 3000
rng = np.random.default_rng(1)
dep = scene.uniform_deployment(rng, N, 1, SIDE, RADIUS)
x0 = rng.uniform(0, SIDE, (N, 2))
rngs = {p: np.random.default_rng([1, i]) for i, p in enumerate(("motion", "ranging", "odometry"))}

print(mobile.feasibility_check(1, N, 2, 2, 2))
sim = mobile.MobileSimulation(dep, x0, rngs=rngs, monitor=True, check_dynamics=True)
res = sim.run(STEPS)

for k in (0, 100, 500, 1000, 2000, STEPS):
    e = res.initial_error if k == 0 else res.errors[k - 1]
    p = 1.0 if k == 0 else res.product_norms[k - 1]
    print(f"  k = {k:5d}   ||e|| = {e:10.3e}   ||prod P|| = {p:.3e}")

s = res.connectivity.summary(STEPS)
print(f"updates per agent: {res.updates.sum() / N:.1f}")
print(f"anchor information reached every agent: {s['all_reached']}, "
      f"longest wait {max(s['max_gap'])} steps")
print(f"row classes: {res.row_classes}")
print(f"largest deviation from e_(k+1) = P_k e_k: {res.max_dynamics_residual:.1e}")
