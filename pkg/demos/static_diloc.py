"""Static localization: ten agents inside an anchor triangle.

Each agent finds three neighbours whose triangle contains it, turns the
inter-node distances into barycentric weights and repeatedly replaces its
estimate by the weighted average of its neighbours' estimates. The iteration
forgets its starting point: wild initial guesses still converge to the true
positions, at a rate set by the spectral radius of the agent-to-agent
weights.
"""

import numpy as np

from linloc import diloc, scene
from linloc.diloc import StateVector

rng = np.random.default_rng(1)
dep = scene.simplex_deployment(rng, 10, side=10.0, comm_radius=7.0)
sets = diloc.triangulate(dep)
M = diloc.assemble_system(dep, sets)
u, truth = diloc.anchor_positions(dep), diloc.agent_truth(dep)

print(f"spectral radius of P: {diloc.spectral_radius(M.P):.3f}")
print(f"anchors per set: {[sum(s.anchor_mask) for s in sets.values()]}")

x0 = rng.uniform(-100, 100, truth.shape)
res = diloc.diloc_run(StateVector(x0, u), M, tol=1e-10, truth=truth)
for k in sorted({0, 1, 5, 10, 20, 50, res.iterations} & set(range(res.iterations + 1))):
    print(f"  k = {k:4d}   ||e|| = {res.errors[k]:.3e}")

limit = diloc.closed_form_limit(M, u)
print(f"closed-form limit vs truth: {np.abs(limit - truth).max():.1e}")
