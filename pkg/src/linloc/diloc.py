"""Static-network barycentric iteration: assembly, iteration, limit, spectrum."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import scene
from .errors import IncompleteTriangulation, InvalidInput, NotAbsorbing

log = logging.getLogger(__name__)


@dataclass
class SystemMatrices:
    """Agent-to-agent weights ``P`` (N x N) and agent-to-anchor weights ``B`` (N x M).

    Row ``i`` refers to the ``i``-th agent of the deployment (in row order),
    column ``a`` of ``B`` to the ``a``-th anchor.
    """

    P: np.ndarray
    B: np.ndarray

    @property
    def n_agents(self):
        return self.P.shape[0]

    def row_sums(self):
        return self.P.sum(axis=1) + self.B.sum(axis=1)

    def upsilon(self):
        """The block matrix ``[[I, 0], [B, P]]`` acting on ``[u; x]``."""
        n, m = self.B.shape
        top = np.hstack([np.eye(m), np.zeros((m, n))])
        return np.vstack([top, np.hstack([self.B, self.P])])


@dataclass
class StateVector:
    x: np.ndarray  # (N, m) agent estimates
    u: np.ndarray  # (M, m) anchor positions

    def copy(self):
        return StateVector(self.x.copy(), self.u.copy())


@dataclass
class RunResult:
    errors: np.ndarray  # ||x_k - x*||_2 for k = 0..iterations (empty without truth)
    state: StateVector
    converged: bool
    iterations: int
    deltas: list = field(default_factory=list)


def agent_truth(dep):
    return dep.positions[dep.agent_rows]


def anchor_positions(dep):
    return dep.positions[dep.anchor_rows]


def triangulate(dep, dists=None, **search):
    """Triangulation sets for every agent, keyed by agent id (None when missing)."""
    return {
        int(dep.ids[r]): scene.find_triangulation_set(dep, int(dep.ids[r]), dists, **search)
        for r in dep.agent_rows
    }


def assemble_system(dep, sets):
    """Scatter each agent's barycentric weights into ``P`` and ``B``."""
    agent_col = {int(r): c for c, r in enumerate(dep.agent_rows)}
    anchor_col = {int(r): c for c, r in enumerate(dep.anchor_rows)}
    P = np.zeros((dep.n_agents, dep.n_agents))
    B = np.zeros((dep.n_agents, dep.n_anchors))
    missing = []
    for i, r in enumerate(dep.agent_rows):
        ts = sets.get(int(dep.ids[r]))
        if ts is None:
            missing.append(int(dep.ids[r]))
            continue
        for member, w in zip(ts.members, ts.weights):
            mr = dep.row(member)
            if mr in agent_col:
                P[i, agent_col[mr]] += w
            else:
                B[i, anchor_col[mr]] += w
    if missing:
        raise IncompleteTriangulation(missing)
    return SystemMatrices(P, B)


def diloc_step(s, M):
    """One synchronous update ``x <- P x + B u``; anchors are untouched."""
    if s.x.shape[0] != M.P.shape[0] or s.u.shape[0] != M.B.shape[1]:
        raise InvalidInput("state and system dimensions disagree")
    return StateVector(M.P @ s.x + M.B @ s.u, s.u)


def diloc_run(s0, M, max_iters=100_000, tol=1e-10, truth=None):
    """Iterate until successive estimates change by at most ``tol`` (Frobenius).

    With ``truth`` given, the error norm ``||x_k - x*||_2`` over the stacked
    estimates is recorded for every iterate including the initial one.
    """
    rho = spectral_radius(M.P) if M.P.size else 0.0
    if rho >= 1:
        log.warning("spectral radius of P is %.6g >= 1; the iteration may not converge", rho)
    s = s0.copy()
    errors = []
    if truth is not None:
        errors.append(float(np.linalg.norm(s.x - truth)))
    if s.x.shape[0] == 0:
        return RunResult(np.asarray(errors), s, True, 0)
    converged = False
    k = 0
    while k < max_iters:
        nxt = diloc_step(s, M)
        delta = float(np.linalg.norm(nxt.x - s.x))
        s = nxt
        k += 1
        if truth is not None:
            errors.append(float(np.linalg.norm(s.x - truth)))
        if delta <= tol:
            converged = True
            break
    return RunResult(np.asarray(errors), s, converged, k)


def closed_form_limit(M, u):
    """Fixed point ``(I - P)^{-1} B u`` of the iteration."""
    n = M.P.shape[0]
    lhs = np.eye(n) - M.P
    if n == 0:
        return np.zeros((0, np.shape(u)[1]))
    if np.linalg.cond(lhs) > 1e12:
        raise NotAbsorbing("I - P is singular: some agent has no path to an anchor")
    return np.linalg.solve(lhs, M.B @ u)


def spectral_radius(P):
    """Largest eigenvalue magnitude of ``P``."""
    A = np.asarray(P, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput("spectral radius needs a square matrix")
    if A.shape[0] == 0 or not A.any():
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def initial_estimates(rng, n_agents, box, dim=None):
    """Uniform random estimates inside ``box = (lo, hi)``; scalar bounds need ``dim``."""
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    return rng.uniform(lo, hi, size=(n_agents, dim or lo.size))
