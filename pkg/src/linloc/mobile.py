"""Opportunistic localization of mobile agents.

At every step each agent looks for a triangulation set among its current
neighbors. Without one it dead-reckons (adds its measured motion); with one
it mixes its estimate with the neighbors' estimates::

    x_i <- a_k x_i + (1 - a_k) sum_j w_ij x_j + motion_i

Stacked over agents this is ``x <- P_k x + B_k u_k + motion`` and, without
noise, the error obeys ``e_{k+1} = P_k e_k`` exactly. Convergence therefore
hinges on the product of the ``P_k`` going to zero, which needs anchor
information to reach every agent often enough; :class:`ConnectivityLog`
and :class:`ErrorProductMonitor` observe that at run time.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry, scene
from .errors import InvalidInput


class RowClass(enum.Enum):
    IDENTITY = "identity"
    STOCHASTIC = "stochastic"
    SUB_STOCHASTIC = "sub_stochastic"


class Gate(enum.Enum):
    ACCEPT = "accept"
    REJECT_SIGN = "reject_sign"  # a Cayley-Menger determinant has the infeasible sign
    REJECT_ERROR = "reject_error"  # relative inclusion error too large


# -- motion ------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionModel:
    """``static`` or ``rwp``: each step a node moves a distance ``U[0, d_max]``
    along a uniformly random heading. Steps that would leave the region are
    redrawn until they land inside."""

    kind: str = "rwp"
    d_max: float = 5.0
    max_tries: int = 10_000

    def __post_init__(self):
        if self.kind not in ("static", "rwp"):
            raise InvalidInput(f"unknown motion model {self.kind!r}")
        if self.kind == "rwp" and not self.d_max > 0:
            raise InvalidInput("d_max must be positive")


def _headings(rng, n, dim):
    if dim == 2:
        theta = rng.uniform(0.0, 2 * math.pi, n)
        return np.column_stack([np.cos(theta), np.sin(theta)]), theta
    if dim == 1:
        s = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return s[:, None], None
    g = rng.normal(size=(n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True), None


@dataclass
class Motion:
    """One step of true motion: displacement, distance and heading per node."""

    delta: np.ndarray  # (n, dim)
    dist: np.ndarray  # (n,)
    direction: np.ndarray  # (n, dim) unit vectors
    theta: np.ndarray = None  # (n,) headings in the plane, else None


def sample_motion(positions, region, model, rng, moving=None):
    """Draw one step of motion for the nodes flagged in ``moving`` (default all)."""
    positions = np.asarray(positions, dtype=float)
    n, dim = positions.shape
    moving = np.ones(n, bool) if moving is None else np.asarray(moving, bool)
    dist = np.zeros(n)
    direction = np.zeros((n, dim))
    theta = np.zeros(n) if dim == 2 else None
    if model.kind == "static" or not moving.any():
        return Motion(np.zeros((n, dim)), dist, direction, theta)
    lo, hi = region
    todo = np.flatnonzero(moving)
    for _ in range(model.max_tries):
        d = rng.uniform(0.0, model.d_max, len(todo))
        u, th = _headings(rng, len(todo), dim)
        dest = positions[todo] + d[:, None] * u
        ok = np.all((dest >= lo) & (dest <= hi), axis=1)
        idx = todo[ok]
        dist[idx], direction[idx] = d[ok], u[ok]
        if theta is not None:
            theta[idx] = th[ok]
        todo = todo[~ok]
        if not len(todo):
            break
    # nodes still in ``todo`` after max_tries stay put rather than leave the region
    return Motion(dist[:, None] * direction, dist, direction, theta)


def motion_step(dep, model, rng, anchors_move=True):
    """Advance every node; returns the new deployment and the true motion vectors."""
    moving = np.ones(len(dep.positions), bool)
    if not anchors_move:
        moving &= ~dep.is_anchor
    mv = sample_motion(dep.positions, dep.region, model, rng, moving)
    return dep.with_positions(dep.positions + mv.delta), mv


@dataclass(frozen=True)
class MotionNoise:
    """Odometry and ranging noise that grows with distance travelled and time.

    Per step, agent ``i`` measures its distance and heading with variances
    ``K_d**2 D_i`` and ``K_theta**2 D_i``, where ``D_i`` is its total distance
    travelled so far; ranges at step ``k`` carry variance ``K_r**2 k``.
    ``basis="step"`` uses the distance of the current step for ``D_i``
    instead, so that odometry error accumulates linearly with distance.
    """

    K_d: float = 0.0
    K_theta: float = 0.0
    K_r: float = 0.0
    basis: str = "cumulative"

    def __post_init__(self):
        if min(self.K_d, self.K_theta, self.K_r) < 0:
            raise InvalidInput("noise coefficients must be nonnegative")
        if self.basis not in ("cumulative", "step"):
            raise InvalidInput("basis must be 'cumulative' or 'step'")

    @property
    def enabled(self):
        return bool(self.K_d or self.K_theta or self.K_r)

    def measured_motion(self, mv, travelled, rng):
        """Noisy odometry for the rows of ``mv`` given cumulative distances."""
        if not (self.K_d or self.K_theta):
            return mv.delta.copy()
        n, dim = mv.delta.shape
        if self.basis == "step":
            travelled = mv.dist
        sd = self.K_d * np.sqrt(travelled)
        st = self.K_theta * np.sqrt(travelled)
        d_hat = mv.dist + rng.normal(size=n) * sd
        if dim == 2:
            th = mv.theta + rng.normal(size=n) * st
            u = np.column_stack([np.cos(th), np.sin(th)])
        elif dim == 1:
            u = mv.direction
        else:
            u = mv.direction + rng.normal(size=(n, dim)) * st[:, None]
            norms = np.linalg.norm(u, axis=1, keepdims=True)
            u = np.where(norms > 0, u / np.where(norms > 0, norms, 1.0), 0.0)
        moved = mv.dist > 0
        return np.where(moved[:, None], d_hat[:, None] * u, 0.0)

    def range_sigma(self, k):
        return self.K_r * math.sqrt(k)

    def measure_ranges(self, dists, k, rng):
        sigma = self.range_sigma(k)
        if sigma == 0:
            return dists
        n = len(dists)
        iu = np.triu_indices(n, 1)
        noise = np.zeros_like(dists)
        noise[iu] = rng.normal(0.0, sigma, len(iu[0]))
        return np.abs(dists + noise + noise.T)


@dataclass(frozen=True)
class MobileParams:
    """Update parameters.

    ``beta`` bounds the self-weight from below, ``alpha_anchor`` the weight
    an anchor receives in ``B_k``. ``alpha_k`` (default ``beta``) is the
    self-weight used when a set is found and must lie in ``[beta, 1)``.
    ``epsilon`` switches the triangulation test to the noise-tolerant gate
    (relative inclusion error below ``epsilon``, no wrong-sign determinant,
    weights renormalised).
    """

    beta: float = 0.01
    alpha_anchor: float = 0.01
    alpha_k: float = None
    epsilon: float = None
    policy: scene.SelectionPolicy = scene.SelectionPolicy.MAX_MIN_WEIGHT
    max_subsets: int = 200
    tol_rel: float = geometry.DEFAULT_TOL_REL
    update_mode: str = "jacobi"

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise InvalidInput("beta must lie in (0, 1)")
        if not 0 < self.alpha_anchor < 1:
            raise InvalidInput("alpha_anchor must lie in (0, 1)")
        if not self.beta <= self.self_weight < 1:
            raise InvalidInput("alpha_k must lie in [beta, 1)")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if self.update_mode not in ("jacobi", "sequential"):
            raise InvalidInput("update_mode must be 'jacobi' or 'sequential'")

    @property
    def self_weight(self):
        return self.beta if self.alpha_k is None else self.alpha_k

    @property
    def anchor_weight_floor(self):
        """Smallest barycentric weight an anchor may have so that its ``B_k`` entry
        ``(1 - alpha_k) w`` reaches ``alpha_anchor``."""
        return self.alpha_anchor / (1.0 - self.self_weight)


# -- single-agent update and its matrix form -------------------------------------------------


def opportunistic_update(x_i, alpha_k, motion, neighbor_est=None, weights=None, beta=0.0):
    """New estimate of one agent.

    Without a set (``neighbor_est`` None) ``alpha_k`` must be 1 and the agent
    only adds ``motion``. With a set, ``alpha_k`` must lie in ``[beta, 1)``
    unless it is exactly 1, which again ignores the neighbors.
    """
    x_i = np.asarray(x_i, dtype=float)
    motion = np.asarray(motion, dtype=float)
    if neighbor_est is None:
        if alpha_k != 1:
            raise InvalidInput("without a triangulation set alpha_k must be 1")
        return x_i + motion
    if alpha_k == 1:
        return x_i + motion
    if not (beta <= alpha_k < 1) or alpha_k <= 0:
        raise InvalidInput(f"alpha_k={alpha_k} outside [beta, 1) with beta={beta}")
    w = np.asarray(weights, dtype=float)
    return alpha_k * x_i + (1.0 - alpha_k) * w @ np.asarray(neighbor_est, dtype=float) + motion


@dataclass
class Update:
    """Agent ``agent`` mixes with set ``members`` (node rows) at self-weight ``alpha``."""

    agent: int  # agent column
    members: np.ndarray  # node rows of the deployment
    weights: np.ndarray
    alpha: float
    rel_error: float = 0.0


def node_columns(dep):
    """Per-row agent column and anchor column of a deployment, -1 where not applicable."""
    n_nodes = len(dep.positions)
    agent_col = np.full(n_nodes, -1, dtype=np.intp)
    anchor_col = np.full(n_nodes, -1, dtype=np.intp)
    agent_col[dep.agent_rows] = np.arange(dep.n_agents)
    anchor_col[dep.anchor_rows] = np.arange(dep.n_anchors)
    return agent_col, anchor_col


def assemble_timevarying(dep, updates, columns=None):
    """``(P_k, B_k, classes)`` for one step's updates.

    Rows of agents that did not update are identity rows. A row is
    sub-stochastic exactly when an anchor sits in the agent's set.
    ``columns`` caches :func:`node_columns` across steps.
    """
    n, n_anc = dep.n_agents, dep.n_anchors
    P = np.eye(n)
    B = np.zeros((n, n_anc))
    classes = [RowClass.IDENTITY] * n
    if not updates:
        return P, B, classes
    agent_col, anchor_col = node_columns(dep) if columns is None else columns
    agents = np.array([up.agent for up in updates], dtype=np.intp)
    members = np.array([up.members for up in updates], dtype=np.intp)
    alpha = np.array([up.alpha for up in updates], dtype=float)
    mass = (1.0 - alpha)[:, None] * np.array([up.weights for up in updates], dtype=float)
    ac, bc = agent_col[members], anchor_col[members]
    to_agent = ac >= 0
    owner = np.broadcast_to(agents[:, None], members.shape)
    P[agents] = 0.0
    P[agents, agents] = alpha
    np.add.at(P, (owner[to_agent], ac[to_agent]), mass[to_agent])
    np.add.at(B, (owner[~to_agent], bc[~to_agent]), mass[~to_agent])
    for i, anchored in zip(agents, (~to_agent).any(axis=1)):
        classes[i] = RowClass.SUB_STOCHASTIC if anchored else RowClass.STOCHASTIC
    return P, B, classes


class ErrorProductMonitor:
    """Running product ``P_k ... P_0`` and its norm.

    The noiseless error is this product applied to the initial error, so its
    norm going to zero means convergence from every initialization.
    """

    def __init__(self, n, ord=np.inf):
        self.product = np.eye(n)
        self.ord = ord
        self.norms = []

    def update(self, P_k, rows=None):
        """Left-multiply by ``P_k``; ``rows`` limits the work to non-identity rows."""
        if rows is None:
            self.product = P_k @ self.product
        elif len(rows):
            rows = np.asarray(rows)
            self.product[rows] = P_k[rows] @ self.product
        self.norms.append(self.norm)
        return self.norms[-1]

    @property
    def norm(self):
        if not self.product.size:
            return 0.0
        return float(np.linalg.norm(self.product, self.ord))


def error_product_monitor(history, ord=np.inf):
    """Norm of ``prod_l P_l`` after each matrix of ``history`` (oldest first)."""
    history = list(history)
    if not history:
        raise InvalidInput("history must not be empty")
    mon = ErrorProductMonitor(np.shape(history[0])[0], ord)
    return np.array([mon.update(P) for P in history])


class ConnectivityLog:
    """When anchor information reaches each agent, possibly over several hops.

    ``info_time[i]`` is the newest step at which information that started at
    an anchor has reached agent ``i``. An agent updating against an anchor
    gets the current step; updating against agents inherits their newest
    time. Every increase is an arrival.
    """

    def __init__(self, n_agents):
        self.info_time = np.full(n_agents, -1, dtype=np.int64)
        self.arrivals = [[] for _ in range(n_agents)]

    def record(self, k, agent, anchor_in_set, agent_members):
        self.record_step(k, [(agent, anchor_in_set, agent_members)])

    def record_step(self, k, entries):
        """Apply simultaneous updates ``(agent, anchor_in_set, agent_members)``;
        all of them read the information times from before the step."""
        entries = list(entries)
        width = max((len(e[2]) for e in entries), default=0)
        cols = np.full((len(entries), width), -1, dtype=np.intp)
        for r, e in enumerate(entries):
            cols[r, : len(e[2])] = e[2]
        self.record_arrays(k, [e[0] for e in entries], [e[1] for e in entries], cols)

    def record_arrays(self, k, agents, anchored, member_cols):
        """Array form of :meth:`record_step`; ``member_cols`` is ``(U, w)`` with
        the agent columns of each set, padded with -1."""
        agents = np.asarray(agents, dtype=np.intp)
        if not agents.size:
            return
        cols = np.asarray(member_cols, dtype=np.intp).reshape(len(agents), -1)
        padded = np.append(self.info_time, -1)  # column -1 reads "never"
        t = np.where(np.asarray(anchored, bool), k, -1)
        if cols.shape[1]:
            t = np.maximum(t, padded[cols].max(axis=1))
        gain = t > self.info_time[agents]
        self.info_time[agents[gain]] = t[gain]
        for a in agents[gain]:
            self.arrivals[a].append(k)

    def gaps(self, agent, steps):
        """Arrival gaps of ``agent`` including the lead-in from step 0 and the
        open interval up to ``steps``."""
        marks = [0] + self.arrivals[agent] + [steps]
        return np.diff(marks)

    def summary(self, steps):
        max_gap = [int(self.gaps(i, steps).max()) for i in range(len(self.arrivals))]
        return {
            "arrivals": [len(a) for a in self.arrivals],
            "max_gap": max_gap,
            "all_reached": bool(all(len(a) for a in self.arrivals)),
        }


# -- anchor feasibility -------------------------------------------------------------------


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    reasons: tuple = ()

    def __bool__(self):
        return self.feasible

    def __str__(self):
        return "Feasible" if self.feasible else "Infeasible: " + "; ".join(self.reasons)


def feasibility_check(num_anchors, num_agents, dim_agent_motion, dim_anchor_motion, m):
    """Necessary anchor-count conditions for localizing mobile agents in ``R^m``.

    1. at least one anchor;
    2. anchors + agents >= m + 2;
    3. anchors + dim(union of agent motions) + dim(union of anchor motions) >= m + 1.
    """
    args = (num_anchors, num_agents, dim_agent_motion, dim_anchor_motion, m)
    if any(int(a) != a or a < 0 for a in args):
        raise InvalidInput("all arguments must be nonnegative integers")
    if m < 1 or dim_agent_motion > m or dim_anchor_motion > m:
        raise InvalidInput("need m >= 1 and motion dimensions at most m")
    reasons = []
    if num_anchors < 1:
        reasons.append("at least one anchor is required")
    if num_anchors + num_agents < m + 2:
        reasons.append(f"anchors + agents = {num_anchors + num_agents} < m + 2 = {m + 2}")
    total = num_anchors + dim_agent_motion + dim_anchor_motion
    if total < m + 1:
        reasons.append(
            f"anchors + agent motion dim + anchor motion dim = {total} < m + 1 = {m + 1}"
        )
    return Feasibility(not reasons, tuple(reasons))


# -- noise gates ----------------------------------------------------------------------------


def noisy_update_gates(i_dists, s, epsilon):
    """Accept or reject a candidate set from noisy distances.

    Returns ``(gate, rel_error, weights)``: the set is rejected when any
    Cayley-Menger determinant has the infeasible sign, or when the relative
    inclusion error ``|sum parts - total| / total`` is not below
    ``epsilon``. Accepted weights are renormalised to sum to one.
    """
    d2 = s.d2 if isinstance(s, geometry.Simplex) else np.asarray(s, dtype=float)
    i_dists = np.asarray(i_dists, dtype=float)
    if i_dists.shape != (d2.shape[-1],):
        raise InvalidInput("need one distance per set member")
    total, parts, bad = geometry.component_volumes(geometry.augment(d2, i_dists))
    if bad or total <= 0:
        return Gate.REJECT_SIGN, math.inf, None
    rel = float(geometry.relative_inclusion_error(total, parts))
    if not rel < epsilon or np.min(parts) <= 0:
        return Gate.REJECT_ERROR, rel, None
    return Gate.ACCEPT, rel, parts / np.sum(parts)


# -- simulation ----------------------------------------------------------------------------------


@dataclass
class StepRecord:
    error_norm: float
    updates: int
    neighbor_counts: np.ndarray


@dataclass
class MobileResult:
    errors: np.ndarray  # error norm after each step
    initial_error: float
    updates: np.ndarray  # number of agent updates per step
    neighbor_hist: np.ndarray  # counts of agent-steps by neighbor count
    connectivity: ConnectivityLog
    product_norms: np.ndarray = None
    max_dynamics_residual: float = 0.0
    row_classes: dict = field(default_factory=dict)


class MobileSimulation:
    """Joint simulation of true motion and the opportunistic estimator.

    ``rngs`` maps purposes (``motion``, ``ranging``, ``odometry``, ``schedule``)
    to independent generators so that toggling one noise source leaves the
    others' draws unchanged.
    """

    def __init__(self, dep, x0, params=MobileParams(), model=MotionModel(),
                 noise=MotionNoise(), rngs=None, anchors_move=True, monitor=False,
                 check_dynamics=False, hist_bins=11):
        self.dep = dep
        self.x = np.array(x0, dtype=float).reshape(dep.n_agents, dep.dim)
        self.params = params
        self.model = model
        self.noise = noise
        self.rngs = rngs or {}
        self.anchors_move = anchors_move
        self.k = 0
        self.travelled = np.zeros(len(dep.positions))
        self.agent_rows = dep.agent_rows
        self.anchor_rows = dep.anchor_rows
        self.columns = node_columns(dep)
        self.log = ConnectivityLog(dep.n_agents)
        self.monitor = ErrorProductMonitor(dep.n_agents) if monitor else None
        self.check_dynamics = check_dynamics
        self.max_residual = 0.0
        self.hist = np.zeros(hist_bins, dtype=np.int64)
        self.class_counts = {c: 0 for c in RowClass}

    def _rng(self, name):
        if name not in self.rngs:
            self.rngs[name] = np.random.default_rng()
        return self.rngs[name]

    @property
    def error(self):
        return self.dep.positions[self.agent_rows] - self.x

    def find_updates(self):
        dep, p = self.dep, self.params
        true_d = dep.distances()
        adj = dep.adjacency(true_d)
        counts = adj[self.agent_rows].sum(axis=1)
        np.add.at(self.hist, np.minimum(counts, len(self.hist) - 1), 1)
        measured = self.noise.measure_ranges(true_d, self.k, self._rng("ranging"))
        eligible = self.agent_rows[counts >= dep.dim + 1]
        found = scene.triangulate_rows(
            dep, eligible, measured, adj, p.policy, p.max_subsets, p.tol_rel,
            p.epsilon, p.anchor_weight_floor,
        )
        rows = sorted(found)
        if p.update_mode == "sequential" and rows:
            rows = [rows[self._rng("schedule").integers(len(rows))]]
        return [
            Update(int(self.columns[0][r]), found[r][0], found[r][1], p.self_weight, found[r][2])
            for r in rows
        ], counts

    def step(self):
        dep = self.dep
        updates, counts = self.find_updates()
        P, B, classes = assemble_timevarying(dep, updates, self.columns)
        self.class_counts[RowClass.IDENTITY] += dep.n_agents - len(updates)
        if updates:
            agents = np.array([up.agent for up in updates], dtype=np.intp)
            member_cols = self.columns[0][np.array([up.members for up in updates])]
            anchored = (member_cols < 0).any(axis=1)
            for c in np.asarray(classes, dtype=object)[agents]:
                self.class_counts[c] += 1
            self.log.record_arrays(self.k, agents, anchored, member_cols)
        e_before = self.error
        u = dep.positions[self.anchor_rows]
        mv = sample_motion(
            dep.positions, dep.region, self.model, self._rng("motion"),
            None if self.anchors_move else ~dep.is_anchor,
        )
        self.travelled += mv.dist
        agent_mv = Motion(
            mv.delta[self.agent_rows], mv.dist[self.agent_rows], mv.direction[self.agent_rows],
            None if mv.theta is None else mv.theta[self.agent_rows],
        )
        measured_mv = self.noise.measured_motion(
            agent_mv, self.travelled[self.agent_rows], self._rng("odometry")
        )
        rows = [up.agent for up in updates]
        x_new = self.x.copy()
        if rows:
            x_new[rows] = P[rows] @ self.x + B[rows] @ u
        self.x = x_new + measured_mv
        self.dep = dep.with_positions(dep.positions + mv.delta)
        if self.monitor is not None:
            self.monitor.update(P, rows)
        if self.check_dynamics:
            resid = np.max(np.abs(self.error - P @ e_before), initial=0.0)
            self.max_residual = max(self.max_residual, float(resid))
        self.k += 1
        return StepRecord(float(np.linalg.norm(self.error)), len(updates), counts)

    def run(self, steps):
        initial = float(np.linalg.norm(self.error))
        errors = np.empty(steps)
        n_updates = np.empty(steps, dtype=np.int64)
        for t in range(steps):
            rec = self.step()
            errors[t] = rec.error_norm
            n_updates[t] = rec.updates
        return MobileResult(
            errors,
            initial,
            n_updates,
            self.hist.copy(),
            self.log,
            None if self.monitor is None else np.asarray(self.monitor.norms),
            self.max_residual,
            {c.value: n for c, n in self.class_counts.items()},
        )
