"""Noise models and the two stochastic-approximation variants of the iteration.

``dlre_step`` tolerates link drops, communication noise and single-shot
noisy distances, converging to a possibly biased limit (see
:func:`bias_of_limit`). ``diland_step`` uses running-mean distance estimates
and converges to the exact locations.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .diloc import StateVector, SystemMatrices
from .errors import InvalidInput, NotAbsorbing, ScheduleError


class Algo(enum.Enum):
    DLRE = "dlre"
    DILAND = "diland"


# -- step sizes ---------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """Step size ``alpha(k)`` for ``k = 0, 1, ...``.

    kinds: ``harmonic`` ``a / (k + k0)``, ``power`` ``a / (k + 1)**tau``,
    ``constant`` ``c``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def harmonic(cls, a=1.0, k0=1.0):
        return cls("harmonic", {"a": float(a), "k0": float(k0)})

    @classmethod
    def power(cls, a=1.0, tau=1.0):
        return cls("power", {"a": float(a), "tau": float(tau)})

    @classmethod
    def constant(cls, c):
        return cls("constant", {"c": float(c)})

    def __call__(self, k):
        p = self.params
        if self.kind == "harmonic":
            return p["a"] / (k + p["k0"])
        if self.kind == "power":
            return p["a"] / (k + 1) ** p["tau"]
        if self.kind == "constant":
            return p["c"]
        raise ScheduleError(f"unknown schedule kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["kind"], {k: float(v) for k, v in doc.get("params", {}).items()})


_REQUIRED = {"harmonic": ("a", "k0"), "power": ("a", "tau"), "constant": ("c",)}


def validate_schedule(s, algo):
    """Check the persistence conditions analytically; raise ScheduleError if violated.

    DLRE needs ``sum alpha = inf`` and ``sum alpha**2 < inf``; DILAND only
    needs nonnegative steps with ``sum alpha = inf``.
    """
    algo = Algo(algo)
    if s.kind not in _REQUIRED:
        raise ScheduleError(f"unknown schedule kind {s.kind!r}")
    missing = [k for k in _REQUIRED[s.kind] if k not in s.params]
    if missing:
        raise ScheduleError(f"{s.kind} schedule needs parameters {missing}")
    p = s.params
    if s.kind == "constant":
        if p["c"] <= 0:
            raise ScheduleError("constant step must be positive (sum alpha would be finite)")
        if algo is Algo.DLRE:
            raise ScheduleError("constant steps are not square summable")
    elif s.kind == "harmonic":
        if p["a"] <= 0:
            raise ScheduleError("harmonic gain must be positive")
        if p["k0"] <= 0:
            raise ScheduleError("harmonic offset k0 must be positive")
    else:
        if p["a"] <= 0:
            raise ScheduleError("power-law gain must be positive")
        if p["tau"] > 1:
            raise ScheduleError("tau > 1 makes the steps summable")
        if algo is Algo.DLRE and p["tau"] <= 0.5:
            raise ScheduleError("tau <= 1/2 makes the steps not square summable")
    return True


# -- noise ----------------------------------------------------------------------


def _zero_mean(rng, kind, sigma, size):
    if sigma == 0:
        return np.zeros(size)
    if kind == "gaussian":
        return rng.normal(0.0, sigma, size)
    if kind == "uniform":
        h = sigma * math.sqrt(3.0)
        return rng.uniform(-h, h, size)
    if kind == "laplace":
        return rng.laplace(0.0, sigma / math.sqrt(2.0), size)
    raise InvalidInput(f"unknown noise kind {kind!r}")


@dataclass(frozen=True)
class LinkModel:
    """Per-link activation probabilities; a scalar applies to every link."""

    q: object = 1.0

    def probs(self, shape):
        q = np.broadcast_to(np.asarray(self.q, dtype=float), shape)
        if np.any((q <= 0) | (q > 1)):
            raise InvalidInput("link probabilities must lie in (0, 1]")
        return q

    def sample(self, rng, shape):
        q = self.probs(shape)
        if np.all(q == 1):
            return np.ones(shape, dtype=bool)
        return rng.random(shape) < q


@dataclass(frozen=True)
class CommNoise:
    """Additive zero-mean noise on every exchanged state component."""

    sigma: float = 0.0
    kind: str = "gaussian"

    def sample(self, rng, shape):
        return _zero_mean(rng, self.kind, self.sigma, shape)


@dataclass(frozen=True)
class RangingNoise:
    """``measured = true + bias + jitter``, one independent draw per unordered pair."""

    bias: float = 0.0
    sigma: float = 0.0
    kind: str = "gaussian"

    def measure(self, rng, dists, count=None):
        """One noisy copy of ``dists``, or ``count`` consecutive ones stacked."""
        n = dists.shape[0]
        iu = np.triu_indices(n, 1)
        lead = () if count is None else (count,)
        noise = np.zeros(lead + dists.shape)
        noise[..., iu[0], iu[1]] = self.bias + _zero_mean(
            rng, self.kind, self.sigma, lead + (len(iu[0]),)
        )
        noise = noise + np.swapaxes(noise, -1, -2)
        return np.abs(dists + noise)


class ConsistentRangeEstimator:
    """Running mean of every distance measurement seen so far."""

    def __init__(self, n):
        self.count = 0
        self.mean = np.zeros((n, n))

    def update(self, measured):
        self.count += 1
        self.mean += (measured - self.mean) / self.count
        return self.mean

    def update_many(self, block):
        """Feed ``block[0], block[1], ...`` in turn; returns the mean after each."""
        k = self.count + np.arange(1, len(block) + 1)
        means = (self.count * self.mean + np.cumsum(block, axis=0)) / k[:, None, None]
        self.count += len(block)
        self.mean = means[-1].copy()
        return means

    @property
    def estimate(self):
        return self.mean


# -- weights from (noisy) distances -------------------------------------------------


class SetLayout:
    """Index bookkeeping for a fixed assignment of triangulation sets."""

    def __init__(self, dep, sets):
        self.n_agents, self.n_anchors = dep.n_agents, dep.n_anchors
        agent_col = {int(r): c for c, r in enumerate(dep.agent_rows)}
        anchor_col = {int(r): c for c, r in enumerate(dep.anchor_rows)}
        members = [[dep.row(j) for j in sets[int(dep.ids[r])].members] for r in dep.agent_rows]
        self.owners = np.asarray(dep.agent_rows, dtype=np.intp)
        self.members = np.asarray(members, dtype=np.intp).reshape(len(self.owners), dep.dim + 1)
        self.allnodes = np.concatenate([self.members, self.owners[:, None]], axis=1)
        self.to_agent = np.isin(self.members, list(agent_col))
        col = {**agent_col, **anchor_col}
        self.col = np.array(
            [[col[r] for r in row] for row in members], dtype=np.intp
        ).reshape(self.members.shape)
        self.row = np.repeat(np.arange(len(self.owners)), dep.dim + 1).reshape(self.members.shape)

    def weights(self, dists):
        """Per-agent normalised weights over the set members, plus a validity mask.

        Under noise the component volumes no longer add up exactly; weights
        are normalised to sum to one and a component whose squared volume
        comes out negative contributes zero. A row is invalid when every
        component collapses.
        """
        idx = self.allnodes
        d = dists[..., idx[:, :, None], idx[:, None, :]]
        _, parts = geometry.component_squared_volumes(d**2)
        parts = np.sqrt(np.clip(parts, 0.0, None))
        psum = parts.sum(axis=-1, keepdims=True)
        valid = psum[..., 0] > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(valid[..., None], parts / psum, 0.0)
        return w, valid

    def scatter(self, w):
        """Weights ``(..., N, m+1)`` into ``P`` and ``B`` with the same leading axes."""
        lead = w.shape[:-2]
        P = np.zeros(lead + (self.n_agents, self.n_agents))
        B = np.zeros(lead + (self.n_agents, self.n_anchors))
        a = self.to_agent
        # members of a set are distinct, so no (row, col) pair repeats
        P[..., self.row[a], self.col[a]] = w[..., a]
        B[..., self.row[~a], self.col[~a]] = w[..., ~a]
        return SystemMatrices(P, B)

    def matrices(self, dists, fallback=None):
        """Barycentric ``(P, B)`` for these sets computed from ``dists``.

        Invalid rows take their weights from ``fallback`` (an ``(N, m+1)``
        array) or raise when none is given.
        """
        if not self.owners.size:
            return SystemMatrices(
                np.zeros((self.n_agents, self.n_agents)), np.zeros((self.n_agents, self.n_anchors))
            )
        w, valid = self.weights(dists)
        if not valid.all():
            if fallback is None:
                raise InvalidInput("a triangulation set collapsed to zero volume under noise")
            w[~valid] = fallback[~valid]
        return self.scatter(w)


def weights_from_distances(dep, sets, dists):
    """Barycentric system matrices for fixed sets, recomputed from ``dists``."""
    return SetLayout(dep, sets).matrices(dists)


# -- the iterations ------------------------------------------------------------------


def dlre_step(x, weights_hat, u, alpha, links_p=None, links_b=None, q_p=1.0, q_b=1.0,
              noise_p=None, noise_b=None):
    """One update of the link-drop / comm-noise / noisy-weight robust iteration.

    ``x_i <- (1 - a) x_i + a [sum_j e_ij p_ij / q_ij (x_j + v_ij)
                               + sum_l e_il b_il / q_il (u_l + v_il)]``

    ``links_*`` are boolean activation masks (default: all active), ``q_*``
    the activation probabilities and ``noise_*`` arrays of shape
    ``(N, N, m)`` / ``(N, M, m)`` with the communication noise of each link.
    """
    x = x.x if isinstance(x, StateVector) else np.asarray(x, dtype=float)
    P, B = weights_hat.P, weights_hat.B
    q_p = np.broadcast_to(np.asarray(q_p, dtype=float), P.shape)
    q_b = np.broadcast_to(np.asarray(q_b, dtype=float), B.shape)
    if np.any((q_p <= 0) & (P != 0)) or np.any((q_b <= 0) & (B != 0)):
        raise InvalidInput("a weighted link has zero activation probability")
    e_p = np.ones(P.shape, bool) if links_p is None else links_p
    e_b = np.ones(B.shape, bool) if links_b is None else links_b
    with np.errstate(divide="ignore", invalid="ignore"):
        Wp = np.where(e_p & (P != 0), P / q_p, 0.0)
        Wb = np.where(e_b & (B != 0), B / q_b, 0.0)
    innov = Wp @ x + Wb @ u
    if noise_p is not None:
        innov = innov + np.einsum("...ij,...ijd->...id", Wp, noise_p)
    if noise_b is not None:
        innov = innov + np.einsum("...ij,...ijd->...id", Wb, noise_b)
    return (1.0 - alpha) * x + alpha * innov


def diland_step(x, weights_bar, u, alpha):
    """``x <- (1 - a) x + a (P_bar x + B_bar u)`` with running-mean-distance weights."""
    x = x.x if isinstance(x, StateVector) else np.asarray(x, dtype=float)
    return (1.0 - alpha) * x + alpha * (weights_bar.P @ x + weights_bar.B @ u)


def bias_of_limit(P, S_P, B, S_B, u):
    """Almost-sure limit ``(I - P - S_P)^{-1} (B + S_B) u`` under biased weights."""
    A = np.eye(P.shape[0]) - P - S_P
    if P.shape[0] and np.linalg.cond(A) > 1e12:
        raise NotAbsorbing("I - P - S_P is singular")
    return np.linalg.solve(A, (B + S_B) @ u) if P.shape[0] else np.zeros((0, u.shape[1]))


# -- drivers -----------------------------------------------------------------------


_BLOCK = 512  # steps whose noisy weights are computed together


@dataclass
class RobustNoise:
    link_q: float = 1.0
    comm_sigma: float = 0.0
    range_bias: float = 0.0
    range_sigma: float = 0.0
    kind: str = "gaussian"


def run_robust(algo, dep, sets, x0, schedule, steps, noise, rngs, weights="fresh",
               record_every=1):
    """Run DLRE or DILAND for ``steps`` iterations on a static deployment.

    ``rngs`` maps purpose names (``ranging``, ``links``, ``comm``) to
    generators. For DLRE, ``weights`` selects ``"fresh"`` single-shot
    weights every step or ``"frozen"`` weights from the first measurement.
    Returns ``(x_final, errors)`` with the error norm after every
    ``record_every`` steps.
    """
    algo = Algo(algo)
    validate_schedule(schedule, algo)
    true_d = dep.distances()
    ranging = RangingNoise(noise.range_bias, noise.range_sigma, noise.kind)
    links = LinkModel(noise.link_q)
    comm = CommNoise(noise.comm_sigma, noise.kind)
    u = dep.positions[dep.anchor_rows]
    truth = dep.positions[dep.agent_rows]
    n, n_anc, m = dep.n_agents, dep.n_anchors, dep.dim
    x = np.array(x0, dtype=float)
    est = ConsistentRangeEstimator(len(true_d))
    layout = SetLayout(dep, sets)
    last = np.full(layout.members.shape, 1.0 / (dep.dim + 1))
    errors = []

    def current(dists):
        """Weights for one measurement, or a stacked block of them. Rows whose
        set collapses under noise keep the previous step's weights."""
        nonlocal last
        w, valid = layout.weights(dists)
        block = w.reshape((-1,) + w.shape[-2:])
        ok = valid.reshape(-1, len(layout.owners))
        for t in np.flatnonzero(~ok.all(axis=1)):
            prev = block[t - 1] if t else last
            block[t][~ok[t]] = prev[~ok[t]]
        last = block[-1].copy()
        return layout.scatter(w)

    # noiseless ranging draws nothing, so the weights can be computed once
    exact = noise.range_bias == 0 and noise.range_sigma == 0
    fixed = current(true_d) if exact else None
    if fixed is None and algo is Algo.DLRE and weights == "frozen":
        fixed = current(ranging.measure(rngs["ranging"], true_d))
    for start in range(0, steps, _BLOCK):
        b = min(_BLOCK, steps - start)
        if fixed is None:
            # a block of measurements up front; draws match one-per-step sampling
            measured = ranging.measure(rngs["ranging"], true_d, b)
            if algo is Algo.DILAND:
                measured = est.update_many(measured)
            W = current(measured)
        else:
            W = SystemMatrices(np.broadcast_to(fixed.P, (b, n, n)),
                               np.broadcast_to(fixed.B, (b, n, n_anc)))
        if algo is Algo.DILAND:
            gain, drive = W.P, W.B @ u
        else:
            # the same bracket as dlre_step, with the block's links and noise
            e_p = links.sample(rngs["links"], (b, n, n))
            e_b = links.sample(rngs["links"], (b, n, n_anc))
            gain = np.where(e_p & (W.P != 0), W.P / noise.link_q, 0.0)
            Wb = np.where(e_b & (W.B != 0), W.B / noise.link_q, 0.0)
            drive = Wb @ u
            if noise.comm_sigma:
                v_p = comm.sample(rngs["comm"], (b, n, n, m))
                v_b = comm.sample(rngs["comm"], (b, n, n_anc, m))
                drive = drive + np.einsum("tij,tijd->tid", gain, v_p)
                drive = drive + np.einsum("tij,tijd->tid", Wb, v_b)
        for t in range(b):
            k = start + t
            a = schedule(k)
            x = (1.0 - a) * x + a * (gain[t] @ x + drive[t])
            if (k + 1) % record_every == 0:
                errors.append(float(np.linalg.norm(x - truth)))
    return x, np.asarray(errors)
