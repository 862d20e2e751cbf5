"""Randomised self-check of the distance-only geometry against coordinate oracles."""

import math

import numpy as np

from .. import geometry

QUALITY_FLOOR = 1e-3  # volume / (longest edge)**m below this counts as a sliver
BOUNDARY_BAND = 1e-4  # points with a barycentric coordinate this close to 0 are skipped
VOLUME_RTOL = 1e-9


def _oracle_volume(points):
    m = points.shape[-1]
    edges = points[:, 1:] - points[:, :1]
    return np.abs(np.linalg.det(edges)) / math.factorial(m)


def _barycentric(points, q):
    """Barycentric coordinates of ``q`` in each simplex by solving the linear system."""
    m = points.shape[-1]
    A = np.concatenate([np.swapaxes(points, 1, 2), np.ones((len(points), 1, m + 1))], axis=1)
    b = np.concatenate([q, np.ones((len(q), 1))], axis=1)
    return np.linalg.solve(A, b[..., None])[..., 0]


def sample_simplices(rng, n, m, floor=QUALITY_FLOOR):
    """``n`` random simplices in ``[-1, 1]^m`` whose shape quality is at least ``floor``."""
    out = np.empty((0, m + 1, m))
    while len(out) < n:
        pts = rng.uniform(-1.0, 1.0, size=(2 * n, m + 1, m))
        d2 = geometry.squared_distances(pts)
        quality = _oracle_volume(pts) / np.sqrt(d2.max(axis=(1, 2))) ** m
        out = np.concatenate([out, pts[quality >= floor]])
    return out[:n]


def validate_geometry(samples=10_000, seed=0, dims=(2, 3)):
    """Compare Cayley-Menger volumes and the inclusion test with coordinate oracles.

    Returns a report with pass counts per dimension and an overall ``ok``.
    """
    rng = np.random.default_rng(seed)
    report = {"samples": samples, "seed": seed, "dims": {}, "ok": True}
    for m in dims:
        pts = sample_simplices(rng, samples, m)
        d2 = geometry.squared_distances(pts)
        vol = np.sqrt(np.clip(geometry.squared_volume(d2), 0.0, None))
        ref = _oracle_volume(pts)
        rel = np.abs(vol - ref) / ref
        lo, hi = pts.min(axis=1), pts.max(axis=1)
        span = hi - lo
        q = lo - 0.25 * span + 1.5 * span * rng.random((samples, m))
        lam = _barycentric(pts, q)
        clear = np.abs(lam).min(axis=1) >= BOUNDARY_BAND
        oracle_inside = lam.min(axis=1) > 0
        i_d2 = np.sum((pts - q[:, None]) ** 2, axis=2)
        total, parts, bad = geometry.component_volumes(geometry.augment(d2, np.sqrt(i_d2)))
        codes = geometry.classify(total, parts, bad, geometry.DEFAULT_TOL_REL)
        agree = (codes == 0) == oracle_inside
        entry = {
            "volume_pass": int(np.sum(rel <= VOLUME_RTOL)),
            "volume_max_rel_error": float(rel.max()),
            "inclusion_checked": int(clear.sum()),
            "inclusion_pass": int(np.sum(agree & clear)),
            "inclusion_skipped_boundary": int(np.sum(~clear)),
        }
        entry["ok"] = (entry["volume_pass"] == samples
                       and entry["inclusion_pass"] == entry["inclusion_checked"])
        report["dims"][str(m)] = entry
        report["ok"] &= entry["ok"]
    return report
