"""Deployments, neighborhoods and triangulation-set search."""

import enum
import functools
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry
from .errors import InvalidInput

AGENT = "agent"
ANCHOR = "anchor"


class SelectionPolicy(enum.Enum):
    FIRST_PASSING = "first_passing"
    MAX_MIN_WEIGHT = "max_min_weight"


@dataclass
class Node:
    id: int
    role: str
    true_pos: np.ndarray
    est_pos: np.ndarray = None

    def __post_init__(self):
        if self.role not in (AGENT, ANCHOR):
            raise InvalidInput(f"unknown role {self.role!r}")
        self.true_pos = np.asarray(self.true_pos, dtype=float)
        if self.role == ANCHOR:
            self.est_pos = self.true_pos
        elif self.est_pos is not None:
            self.est_pos = np.asarray(self.est_pos, dtype=float)


class Deployment:
    """Node roster with true positions, a bounding region and a radio range.

    Positions are stored as one ``(n, dim)`` array; ``ids[k]`` is the node id
    of row ``k``.
    """

    def __init__(self, dim, positions, is_anchor, region, comm_radius, ids=None):
        self.dim = int(dim)
        self.positions = np.array(positions, dtype=float).reshape(-1, self.dim)
        self.is_anchor = np.asarray(is_anchor, dtype=bool).copy()
        n = len(self.positions)
        if self.is_anchor.shape != (n,):
            raise InvalidInput("is_anchor must have one entry per node")
        self.ids = np.arange(n) if ids is None else np.asarray(ids, dtype=int)
        if len(set(self.ids.tolist())) != n:
            raise InvalidInput("node ids must be unique")
        lo, hi = (np.asarray(b, dtype=float).reshape(self.dim) for b in region)
        if np.any(hi <= lo):
            raise InvalidInput("region must have positive extent on every axis")
        self.region = (lo, hi)
        if not comm_radius > 0:
            raise InvalidInput("comm_radius must be positive")
        self.comm_radius = float(comm_radius)
        if n and not self.contains(self.positions).all():
            raise InvalidInput("all true positions must lie inside the region")
        self._row = {int(k): r for r, k in enumerate(self.ids)}

    # -- roster -----------------------------------------------------------
    @property
    def agent_rows(self):
        return np.flatnonzero(~self.is_anchor)

    @property
    def anchor_rows(self):
        return np.flatnonzero(self.is_anchor)

    @property
    def n_agents(self):
        return int(np.sum(~self.is_anchor))

    @property
    def n_anchors(self):
        return int(np.sum(self.is_anchor))

    def row(self, node_id):
        try:
            return self._row[int(node_id)]
        except KeyError:
            raise InvalidInput(f"unknown node id {node_id}") from None

    @property
    def nodes(self):
        return [
            Node(int(k), ANCHOR if a else AGENT, p.copy())
            for k, a, p in zip(self.ids, self.is_anchor, self.positions)
        ]

    def contains(self, points, atol=1e-9):
        lo, hi = self.region
        points = np.asarray(points, dtype=float)
        return np.all((points >= lo - atol) & (points <= hi + atol), axis=-1)

    def with_positions(self, positions):
        return Deployment(
            self.dim, positions, self.is_anchor, self.region, self.comm_radius, self.ids
        )

    def distances(self):
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def adjacency(self, dists=None):
        dists = self.distances() if dists is None else dists
        adj = dists <= self.comm_radius
        np.fill_diagonal(adj, False)
        return adj

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        lo, hi = self.region
        return {
            "dim": self.dim,
            "region": [lo.tolist(), hi.tolist()],
            "comm_radius": self.comm_radius,
            "nodes": [
                {"id": int(k), "role": ANCHOR if a else AGENT, "pos": p.tolist()}
                for k, a, p in zip(self.ids, self.is_anchor, self.positions)
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            nodes = doc["nodes"]
            dim = int(doc["dim"])
            roles = [n["role"] for n in nodes]
            bad = set(roles) - {AGENT, ANCHOR}
            if bad:
                raise InvalidInput(f"unknown roles {sorted(bad)}")
            return cls(
                dim,
                [n["pos"] for n in nodes] if nodes else np.zeros((0, dim)),
                [r == ANCHOR for r in roles],
                doc["region"],
                doc["comm_radius"],
                [n["id"] for n in nodes],
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed deployment document: {exc!r}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        return (
            isinstance(other, Deployment)
            and self.dim == other.dim
            and self.comm_radius == other.comm_radius
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.is_anchor, other.is_anchor)
            and np.array_equal(self.positions, other.positions)
            and all(np.array_equal(a, b) for a, b in zip(self.region, other.region))
        )

    def __repr__(self):
        return (
            f"Deployment(dim={self.dim}, agents={self.n_agents}, anchors={self.n_anchors}, "
            f"comm_radius={self.comm_radius})"
        )


@dataclass(frozen=True)
class TriangulationSet:
    owner: int
    members: tuple
    weights: np.ndarray
    anchor_mask: tuple
    rel_error: float = 0.0


def neighbors(dep, i):
    """Ids of all nodes within ``comm_radius`` of node ``i`` (closed ball)."""
    r = dep.row(i)
    d = np.linalg.norm(dep.positions - dep.positions[r], axis=1)
    mask = d <= dep.comm_radius
    mask[r] = False
    return {int(k) for k in dep.ids[mask]}


# -- candidate scoring ------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _combos(n, k, cap):
    rows = list(itertools.islice(itertools.combinations(range(n), k), cap))
    return np.array(rows, dtype=np.intp).reshape(-1, k)


@dataclass
class CandidateScores:
    """Per-candidate results of the distance-only inclusion test."""

    accepted: np.ndarray  # (K,) bool
    weights: np.ndarray  # (K, m+1), rows sum to one where accepted
    rel_error: np.ndarray  # (K,)
    bad_sign: np.ndarray  # (K,) some determinant has the infeasible sign
    codes: np.ndarray  # (K,) 0 inside, 1 outside, 2 degenerate


def score_candidates(
    dists,
    owners,
    members,
    is_anchor,
    tol_rel=geometry.DEFAULT_TOL_REL,
    epsilon=None,
    anchor_floor=0.0,
):
    """Run the inclusion test for a batch of (owner, member set) candidates.

    ``dists`` is the (measured) distance matrix over all nodes. With
    ``epsilon`` set, the noise-tolerant gate replaces the strict test: the
    candidate is accepted when no determinant has the wrong sign and the
    relative inclusion error is below ``epsilon``. ``anchor_floor`` rejects
    sets in which an anchor would get a smaller weight.
    """
    owners = np.asarray(owners, dtype=np.intp)
    members = np.asarray(members, dtype=np.intp)
    k, size = members.shape
    allnodes = np.concatenate([members, owners[:, None]], axis=1)
    d = dists[allnodes[:, :, None], allnodes[:, None, :]]
    total, parts, bad = geometry.component_volumes(d**2)
    codes = geometry.classify(total, parts, bad, tol_rel)
    rel = geometry.relative_inclusion_error(total, parts)
    psum = np.sum(parts, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where(psum[:, None] > 0, parts / psum[:, None], 0.0)
    if epsilon is None:
        accepted = codes == 0
    else:
        accepted = (~bad) & (total > 0) & (np.min(parts, axis=1) > 0) & (rel < epsilon)
    if anchor_floor > 0:
        low = is_anchor[members] & (weights < anchor_floor)
        accepted &= ~np.any(low, axis=1)
    return CandidateScores(accepted, weights, rel, bad, codes)


def enumerate_candidates(neigh_rows, dim, max_subsets):
    neigh_rows = np.asarray(neigh_rows, dtype=np.intp)
    if len(neigh_rows) < dim + 1:
        return np.zeros((0, dim + 1), dtype=np.intp)
    return neigh_rows[_combos(len(neigh_rows), dim + 1, max_subsets)]


def triangulate_rows(
    dep,
    rows,
    dists=None,
    adjacency=None,
    policy=SelectionPolicy.MAX_MIN_WEIGHT,
    max_subsets=200,
    tol_rel=geometry.DEFAULT_TOL_REL,
    epsilon=None,
    anchor_floor=0.0,
):
    """Triangulation search for several agents at once.

    Returns ``{row: (member_rows, weights, rel_error)}`` for the agents that
    found a set; the others are absent. Neighborhoods come from
    ``adjacency`` (default: true distances within the radio range) and the
    inclusion test uses ``dists`` (default: true distances).
    """
    if dists is None:
        dists = dep.distances()
    if adjacency is None:
        adjacency = dep.adjacency()
    rows = np.asarray(rows, dtype=np.intp)
    counts = adjacency[rows].sum(axis=1)
    owner_list, cand_list = [], []
    # agents with the same neighbor count share one combination table
    for n in np.unique(counts[counts >= dep.dim + 1]):
        group = rows[counts == n]
        neigh = np.nonzero(adjacency[group])[1].reshape(len(group), n)
        if np.any(np.diff(dep.ids) < 0):
            # enumerate in node-id order, not row order
            neigh = np.take_along_axis(neigh, np.argsort(dep.ids[neigh], axis=1), axis=1)
        combos = _combos(int(n), dep.dim + 1, max_subsets)
        cand_list.append(neigh[:, combos].reshape(-1, dep.dim + 1))
        owner_list.append(np.repeat(group, len(combos)))
    if not cand_list:
        return {}
    owners = np.concatenate(owner_list)
    members = np.concatenate(cand_list)
    scores = score_candidates(
        dists, owners, members, dep.is_anchor, tol_rel, epsilon, anchor_floor
    )
    n_anchor = np.sum(dep.is_anchor[members], axis=1)
    ok = np.flatnonzero(scores.accepted)
    if not ok.size:
        return {}
    if policy is SelectionPolicy.FIRST_PASSING:
        keys = (ok, owners[ok])
    else:
        minw = np.min(scores.weights[ok], axis=1)
        keys = (ok, -n_anchor[ok], -minw, owners[ok])
    # sorted by owner first, so the head of each owner's run is its best set
    ranked = ok[np.lexsort(keys)]
    head = np.r_[True, np.diff(owners[ranked]) != 0]
    return {
        int(owners[c]): (members[c], scores.weights[c].copy(), float(scores.rel_error[c]))
        for c in ranked[head]
    }


def find_triangulation_set(
    dep,
    i,
    dists=None,
    policy=SelectionPolicy.MAX_MIN_WEIGHT,
    max_subsets=200,
    tol_rel=geometry.DEFAULT_TOL_REL,
    epsilon=None,
    anchor_floor=0.0,
):
    """Search agent ``i``'s neighbors for ``dim + 1`` nodes whose hull contains it.

    Returns a :class:`TriangulationSet` or None when no candidate passes.
    ``dists`` is the (possibly noisy) distance matrix used for the test.
    """
    r = dep.row(i)
    if dep.is_anchor[r]:
        raise InvalidInput(f"node {i} is an anchor")
    found = triangulate_rows(
        dep, [r], dists, None, policy, max_subsets, tol_rel, epsilon, anchor_floor
    ).get(r)
    if found is None:
        return None
    rows, w, rel = found
    return TriangulationSet(
        int(i),
        tuple(int(dep.ids[j]) for j in rows),
        w,
        tuple(bool(dep.is_anchor[j]) for j in rows),
        rel,
    )


# -- deployment generators ----------------------------------------------------


def uniform_deployment(rng, n_agents, n_anchors, side, comm_radius, dim=2):
    """Agents first, then anchors, all uniform in ``[0, side]^dim``."""
    n = n_agents + n_anchors
    pos = rng.uniform(0.0, side, size=(n, dim))
    is_anchor = np.r_[np.zeros(n_agents, bool), np.ones(n_anchors, bool)]
    return Deployment(dim, pos, is_anchor, ([0.0] * dim, [side] * dim), comm_radius)


def _simplex_corners(dim, side):
    corners = np.zeros((dim + 1, dim))
    corners[1:] = np.eye(dim) * side
    return corners


def simplex_deployment(rng, n_agents, side, comm_radius, dim=2, margin=0.05):
    """Agents uniform inside the anchor simplex spanned by 0 and ``side * e_j``.

    ``margin`` keeps every agent's barycentric coordinates above that value,
    so agents stay strictly interior.
    """
    if not 0 <= margin * (dim + 1) < 1:
        raise InvalidInput("margin too large for the simplex")
    lam = rng.dirichlet(np.ones(dim + 1), size=n_agents)
    lam = margin + (1 - margin * (dim + 1)) * lam
    corners = _simplex_corners(dim, side)
    pos = np.vstack([lam @ corners, corners])
    is_anchor = np.r_[np.zeros(n_agents, bool), np.ones(dim + 1, bool)]
    return Deployment(dim, pos, is_anchor, ([0.0] * dim, [side] * dim), comm_radius)
