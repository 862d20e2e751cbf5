"""Simplex geometry from inter-node distances.

Everything here works in an arbitrary dimension ``m`` (a simplex has ``m + 1``
vertices) and most kernels accept a leading batch axis, so the triangulation
search can score thousands of candidate sets with one ``np.linalg.det`` call.

Volumes are computed from squared distances with Cayley-Menger determinants::

    A**2 = det([[0, 1^T], [1, D]]) / s_m,    s_m = 2**m (m!)**2 / (-1)**(m + 1)

so ``s_1 = 2``, ``s_2 = -16`` and ``s_3 = 288``.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateAnchors,
    InconsistentRanges,
    InvalidInput,
    NegativeSquaredVolume,
    PreconditionViolated,
)

MAX_DIM = 8
DEFAULT_TOL_REL = 1e-9
DEFAULT_TOL_VOL = 1e-12


class Inclusion(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class Simplex:
    """``dim + 1`` nodes together with their squared pairwise distances."""

    dim: int
    d2: np.ndarray
    members: tuple = field(default=())

    def __post_init__(self):
        d2 = np.asarray(self.d2, dtype=float)
        if d2.shape != (self.dim + 1, self.dim + 1):
            raise InvalidInput(
                f"a {self.dim}-simplex needs a {self.dim + 1}x{self.dim + 1} distance matrix, "
                f"got {d2.shape}"
            )
        if self.members and len(self.members) != self.dim + 1:
            raise InvalidInput("members must list exactly dim + 1 nodes")
        object.__setattr__(self, "d2", d2)

    @classmethod
    def from_points(cls, points, members=()):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(points.shape[1], squared_distances(points), tuple(members))


def cm_coefficient(m):
    """The normalising constant ``s_m`` of the ``m``-simplex volume formula."""
    return 2**m * math.factorial(m) ** 2 / (-1) ** (m + 1)


def squared_distances(points):
    points = np.asarray(points, dtype=float)
    diff = points[..., :, None, :] - points[..., None, :, :]
    return np.einsum("...ijk,...ijk->...ij", diff, diff)


def _check_d2(d2):
    d2 = np.asarray(d2, dtype=float)
    if d2.ndim < 2 or d2.shape[-1] != d2.shape[-2]:
        raise InvalidInput(f"squared distance matrix must be square, got shape {d2.shape}")
    n = d2.shape[-1]
    if n < 2:
        raise InvalidInput("a simplex needs at least two nodes (dimension m >= 1)")
    if n - 1 > MAX_DIM:
        raise InvalidInput(f"dimension {n - 1} exceeds the supported maximum {MAX_DIM}")
    if not np.all(np.isfinite(d2)):
        raise InvalidInput("squared distances must be finite")
    if np.any(d2 < 0):
        raise InvalidInput("squared distances must be nonnegative")
    scale = max(1.0, float(np.max(d2)))
    if not np.allclose(d2, np.swapaxes(d2, -1, -2), rtol=0, atol=1e-12 * scale):
        raise InvalidInput("squared distance matrix must be symmetric")
    if np.any(np.abs(np.diagonal(d2, axis1=-2, axis2=-1)) > 1e-12 * scale):
        raise InvalidInput("squared distance matrix must have a zero diagonal")
    return d2


def _bordered_det(d2):
    n = d2.shape[-1]
    if n == 2:
        return 2.0 * d2[..., 0, 1]
    if n == 3:
        # -16 area**2 via Kahan's ordering of Heron's formula, accurate to a few
        # ulps even for needle triangles where the expanded determinant cancels
        x, y, z = (np.sqrt(np.abs(d2[..., i, j])) for i, j in ((0, 1), (0, 2), (1, 2)))
        lo, hi = np.minimum(x, y), np.maximum(x, y)
        a, c = np.maximum(hi, z), np.minimum(lo, z)
        b = np.maximum(lo, np.minimum(hi, z))
        return -(a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    bordered = np.ones(d2.shape[:-2] + (n + 1, n + 1))
    bordered[..., 0, 0] = 0.0
    bordered[..., 1:, 1:] = d2
    return np.linalg.det(bordered)


def cayley_menger_det(d2):
    """Determinant of the bordered matrix ``[[0, 1^T], [1, D]]``.

    ``d2`` holds squared distances of ``m + 1`` nodes, optionally with leading
    batch axes.
    """
    return _bordered_det(_check_d2(d2))


def squared_volume(d2):
    """Signed squared hypervolume ``det / s_m`` (negative means inconsistent distances)."""
    d2 = np.asarray(d2, dtype=float)
    m = d2.shape[-1] - 1
    return _bordered_det(d2) / cm_coefficient(m)


def _resolve_squared(sq, scale_pow, tol_vol):
    """Map signed squared volumes to volumes; flag the ones that are clearly negative."""
    sq = np.asarray(sq, dtype=float)
    thresh = tol_vol * scale_pow
    negative = sq < -thresh
    vol = np.sqrt(np.where(np.abs(sq) <= thresh, 0.0, np.clip(sq, 0.0, None)))
    return vol, negative


def _scale_pow(d2, m):
    return np.maximum(np.max(d2, axis=(-1, -2)), np.finfo(float).tiny) ** m


def simplex_hypervolume(s, tol_vol=DEFAULT_TOL_VOL):
    """Hypervolume of a simplex (length, area, volume, ...) from its distances.

    Accepts a :class:`Simplex` or a squared-distance matrix. Returns 0 for a
    degenerate simplex and raises :class:`NegativeSquaredVolume` when the
    distances cannot belong to any point set in ``R^m``.
    """
    d2 = s.d2 if isinstance(s, Simplex) else _check_d2(s)
    m = d2.shape[-1] - 1
    vol, negative = _resolve_squared(squared_volume(d2), _scale_pow(d2, m), tol_vol)
    if np.any(negative):
        raise NegativeSquaredVolume("distances violate the Cayley-Menger sign condition")
    return float(vol) if np.ndim(vol) == 0 else vol


def augment(d2, i_dists):
    """Append a candidate point, given its distances to the set members, to ``d2``."""
    d2 = np.asarray(d2, dtype=float)
    i2 = np.asarray(i_dists, dtype=float) ** 2
    n = d2.shape[-1]
    out = np.zeros(d2.shape[:-2] + (n + 1, n + 1))
    out[..., :n, :n] = d2
    out[..., :n, n] = i2
    out[..., n, :n] = i2
    return out


def _component_index(m):
    # row j lists the set with member j swapped for the candidate (index m + 1)
    idx = np.tile(np.arange(m + 1), (m + 1, 1))
    idx[np.arange(m + 1), np.arange(m + 1)] = m + 1
    return idx


def component_squared_volumes(d2_aug):
    """Signed squared volumes of the set and of its ``m + 1`` component simplices.

    ``d2_aug`` is ``(..., m + 2, m + 2)`` with the candidate point last.
    Returns ``(total, parts)`` with shapes ``(...)`` and ``(..., m + 1)``.
    """
    d2_aug = np.asarray(d2_aug, dtype=float)
    m = d2_aug.shape[-1] - 2
    total = squared_volume(d2_aug[..., : m + 1, : m + 1])
    idx = _component_index(m)
    sub = d2_aug[..., idx[:, :, None], idx[:, None, :]]
    parts = squared_volume(sub)
    return total, parts


def component_volumes(d2_aug, tol_vol=DEFAULT_TOL_VOL):
    """Volumes of the set and its component simplices plus a per-row wrong-sign flag.

    The flag is True where any of the determinants has the infeasible sign.
    """
    d2_aug = np.asarray(d2_aug, dtype=float)
    m = d2_aug.shape[-1] - 2
    sq_total, sq_parts = component_squared_volumes(d2_aug)
    scale = _scale_pow(d2_aug, m)
    total, neg_total = _resolve_squared(sq_total, scale, tol_vol)
    parts, neg_parts = _resolve_squared(sq_parts, scale[..., None], tol_vol)
    return total, parts, neg_total | np.any(neg_parts, axis=-1)


def relative_inclusion_error(total, parts):
    """``|sum(parts) - total| / total``; infinite for a zero-volume set."""
    total = np.asarray(total, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(np.sum(parts, axis=-1) - total) / total
    return np.where(total > 0, err, np.inf)


def classify(total, parts, bad_sign, tol_rel=DEFAULT_TOL_REL):
    """Vectorised inclusion decision; returns an int array (0 in, 1 out, 2 degenerate).

    A point is inside only if it is strictly interior: the component volumes
    add up to the set volume within ``tol_rel`` and each of them is larger
    than ``tol_rel`` times the set volume.
    """
    total = np.asarray(total, dtype=float)
    inside = (np.sum(parts, axis=-1) <= (1.0 + tol_rel) * total) & (
        np.min(parts, axis=-1) > tol_rel * total
    )
    code = np.where(inside, 0, 1)
    return np.where(bad_sign | (total <= 0), 2, code)


_CODES = (Inclusion.INSIDE, Inclusion.OUTSIDE, Inclusion.DEGENERATE)


def _prepare(i_dists, s):
    d2 = s.d2 if isinstance(s, Simplex) else _check_d2(s)
    i_dists = np.asarray(i_dists, dtype=float)
    if i_dists.shape != (d2.shape[-1],):
        raise InvalidInput(
            f"expected {d2.shape[-1]} distances from the candidate, got shape {i_dists.shape}"
        )
    if np.any(i_dists < 0) or not np.all(np.isfinite(i_dists)):
        raise InvalidInput("distances must be finite and nonnegative")
    return augment(d2, i_dists)


def inclusion_test(i_dists, s, tol_rel=DEFAULT_TOL_REL):
    """Decide whether a point lies strictly inside the simplex ``s``.

    Only distances are used: the point is inside exactly when the volumes of
    the simplices obtained by swapping each vertex for the point add up to
    the volume of ``s``.
    """
    total, parts, bad = component_volumes(_prepare(i_dists, s))
    return _CODES[int(classify(total, parts, bad, tol_rel))]


def barycentric_weights(i_dists, s, tol_rel=DEFAULT_TOL_REL):
    """Barycentric coordinates of an interior point w.r.t. the vertices of ``s``.

    Weight ``j`` is the volume of the component simplex opposite vertex ``j``
    divided by the volume of ``s``; the result is renormalised to sum to one.
    """
    total, parts, bad = component_volumes(_prepare(i_dists, s))
    if _CODES[int(classify(total, parts, bad, tol_rel))] is not Inclusion.INSIDE:
        raise PreconditionViolated("barycentric weights need a strictly interior point")
    return parts / np.sum(parts)


def coordinate_oracle_volume(points):
    """Hypervolume of ``m + 1`` points in ``R^m`` via ``|det(p_j - p_0)| / m!``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, m = points.shape
    if n != m + 1:
        raise InvalidInput(f"need {m + 1} points in R^{m}, got {n}")
    return abs(float(np.linalg.det(points[1:] - points[0]))) / math.factorial(m)


def trilaterate(anchors, ranges, rtol=1e-9):
    """Locate a point from its distances to ``m + 1`` anchors in ``R^m``.

    Subtracting the first sphere equation from the others gives the linear
    system ``2 (a_j - a_0) . x = |a_j|^2 - |a_0|^2 - r_j^2 + r_0^2``.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    ranges = np.asarray(ranges, dtype=float)
    n, m = anchors.shape
    if n != m + 1 or ranges.shape != (n,):
        raise InvalidInput(f"need {m + 1} anchors and ranges in R^{m}")
    if np.any(ranges < 0):
        raise InvalidInput("ranges must be nonnegative")
    diffs = anchors[1:] - anchors[0]
    spread = float(np.max(np.linalg.norm(diffs, axis=1)))
    if spread == 0 or abs(np.linalg.det(diffs)) <= 1e-12 * spread**m:
        raise DegenerateAnchors("anchors are affinely dependent")
    sq = np.sum(anchors**2, axis=1)
    rhs = sq[1:] - sq[0] - ranges[1:] ** 2 + ranges[0] ** 2
    x = np.linalg.solve(2.0 * diffs, rhs)
    resid = np.abs(np.sum((anchors - x) ** 2, axis=1) - ranges**2)
    scale = max(spread, float(np.max(ranges)), float(np.max(np.abs(anchors)))) ** 2
    if np.max(resid) > rtol * max(scale, 1.0):
        raise InconsistentRanges(f"circle residual {np.max(resid):.3e} exceeds tolerance")
    return x
