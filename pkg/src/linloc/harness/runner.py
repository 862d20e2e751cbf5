"""Seeded Monte Carlo orchestration, metrics and file outputs."""

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import baselines, diloc, mobile, robust, scene
from ..errors import IncompleteTriangulation, IoError
from .config import ExperimentConfig

log = logging.getLogger(__name__)

# order matters: a purpose's index is part of its seed
PURPOSES = ("motion", "ranging", "comm", "links", "init", "scene", "odometry", "schedule", "filter")
TAIL = 500  # steps summarised by the steady-state median


def replicate_rngs(master_seed, replicate):
    """Independent generators per purpose, keyed by ``(master_seed, replicate, purpose)``."""
    return {
        name: np.random.Generator(
            np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(replicate, i)))
        )
        for i, name in enumerate(PURPOSES)
    }


def build_scene(cfg, rng):
    sc = cfg.scene
    if sc["kind"] == "uniform":
        return scene.uniform_deployment(
            rng, sc["n_agents"], sc["n_anchors"], sc["side"], sc["comm_radius"], sc["dim"]
        )
    if sc["kind"] == "simplex":
        return scene.simplex_deployment(
            rng, sc["n_agents"], sc["side"], sc["comm_radius"], sc["dim"], sc["margin"]
        )
    if sc["kind"] == "file":
        return scene.Deployment.load(sc["path"])
    return scene.Deployment.from_dict(sc["deployment"])


@dataclass
class ReplicateLog:
    replicate: int
    error_norm: np.ndarray  # ||e_k||_2 after steps k = 1..steps
    updates: np.ndarray  # agent updates per step
    initial_error: float
    histogram: np.ndarray  # agent-steps by neighbor count
    n_agents: int
    extra: dict = field(default_factory=dict)

    @property
    def updates_cum(self):
        return np.cumsum(self.updates)


def _stats(values):
    v = np.asarray(values, dtype=float)
    return {"mean": float(np.mean(v)), "std": float(np.std(v))}


@dataclass
class MetricsLog:
    config: ExperimentConfig
    runs: list

    def per_replicate(self):
        out = []
        for r in self.runs:
            steps = len(r.error_norm)
            tail = r.error_norm[-min(TAIL, steps):]
            total = int(np.sum(r.updates))
            hist_total = int(np.sum(r.histogram))
            out.append({
                "replicate": r.replicate,
                "initial_error": r.initial_error,
                "final_error": float(r.error_norm[-1]),
                "error_ratio": float(r.error_norm[-1] / r.initial_error)
                if r.initial_error > 0 else 0.0,
                "tail_median_error": float(np.median(tail)),
                "total_updates": total,
                "updates_per_agent": total / r.n_agents,
                "update_ratio": total / r.n_agents / steps,
                "zero_neighbor_fraction": float(r.histogram[0] / hist_total) if hist_total else 0.0,
                **r.extra,
            })
        return out

    def aggregates(self):
        """Mean and (population) standard deviation over replicates."""
        rows = self.per_replicate()
        keys = ("final_error", "error_ratio", "tail_median_error", "total_updates",
                "updates_per_agent", "update_ratio", "zero_neighbor_fraction")
        return {k: _stats([row[k] for row in rows]) for k in keys}


# -- per-algorithm replicate runners ------------------------------------------------------


def _initial(cfg, dep, rng):
    lo, hi = cfg.params.get("init_box") or dep.region
    return rng.uniform(lo, hi, size=(dep.n_agents, dep.dim))


def _static_hist(dep, steps):
    counts = dep.adjacency()[dep.agent_rows].sum(axis=1)
    return np.bincount(counts, minlength=len(dep.positions)) * steps


def _sets(cfg, dep, dists=None, epsilon=None):
    sets = diloc.triangulate(
        dep, dists, policy=scene.SelectionPolicy(cfg.params["policy"]),
        max_subsets=cfg.params["max_subsets"], epsilon=epsilon,
    )
    missing = [i for i, s in sets.items() if s is None]
    if missing:
        raise IncompleteTriangulation(missing)
    return sets


def _run_diloc(cfg, dep, rngs):
    M = diloc.assemble_system(dep, _sets(cfg, dep))
    x = _initial(cfg, dep, rngs["init"])
    truth, u = diloc.agent_truth(dep), diloc.anchor_positions(dep)
    initial = float(np.linalg.norm(x - truth))
    errors = np.empty(cfg.steps)
    for k in range(cfg.steps):
        x = M.P @ x + M.B @ u
        errors[k] = np.linalg.norm(x - truth)
    rho = diloc.spectral_radius(M.P) if M.P.size else 0.0
    return errors, np.full(cfg.steps, dep.n_agents), initial, _static_hist(dep, cfg.steps), {
        "spectral_radius": float(rho)
    }


def _run_robust(cfg, dep, rngs):
    # sets are chosen once, from a first noisy measurement of the geometry,
    # with the noise-tolerant inclusion gate whenever ranging is noisy
    noise = cfg.robust_noise()
    ranging = robust.RangingNoise(noise.range_bias, noise.range_sigma, noise.kind)
    noisy = bool(noise.range_bias or noise.range_sigma)
    sets = _sets(cfg, dep, ranging.measure(rngs["ranging"], dep.distances()),
                 cfg.params["epsilon"] if noisy else None)
    x0 = _initial(cfg, dep, rngs["init"])
    initial = float(np.linalg.norm(x0 - diloc.agent_truth(dep)))
    _, errors = robust.run_robust(
        cfg.algorithm, dep, sets, x0, cfg.schedule(), cfg.steps, noise, rngs,
        weights=cfg.params["weights"],
    )
    return errors, np.full(cfg.steps, dep.n_agents), initial, _static_hist(dep, cfg.steps), {}


def _check_feasible(cfg, dep):
    p = cfg.params
    moving = dep.dim
    verdict = mobile.feasibility_check(
        dep.n_anchors, dep.n_agents, moving, moving if p["anchors_move"] else 0, dep.dim
    )
    if not verdict:
        warnings.warn(f"anchor configuration fails a necessary condition: {verdict}",
                      RuntimeWarning, stacklevel=3)
    return verdict


def _run_mobile(cfg, dep, rngs):
    p = cfg.params
    verdict = _check_feasible(cfg, dep)
    sim = mobile.MobileSimulation(
        dep,
        _initial(cfg, dep, rngs["init"]),
        cfg.mobile_params(),
        mobile.MotionModel("rwp", p["d_max"]),
        cfg.motion_noise(),
        rngs=rngs,
        anchors_move=p["anchors_move"],
        hist_bins=len(dep.positions),
    )
    res = sim.run(cfg.steps)
    conn = res.connectivity.summary(cfg.steps)
    return res.errors, res.updates, res.initial_error, res.neighbor_hist, {
        "feasible": verdict.feasible,
        "anchor_info_reached_all": conn["all_reached"],
        "row_classes": res.row_classes,
    }


def _trajectory(cfg, dep, rng):
    """True positions at steps 1..steps and neighbor histogram along the way."""
    p = cfg.params
    model = mobile.MotionModel("rwp", p["d_max"])
    moving = None if p["anchors_move"] else ~dep.is_anchor
    pos = dep.positions.copy()
    hist = np.zeros(len(pos), dtype=np.int64)
    out = np.empty((cfg.steps,) + pos.shape)
    for k in range(cfg.steps):
        counts = dep.with_positions(pos).adjacency()[dep.agent_rows].sum(axis=1)
        hist += np.bincount(counts, minlength=len(pos))
        pos = pos + mobile.sample_motion(pos, dep.region, model, rng, moving).delta
        out[k] = pos
    return out, hist


def _filter_setup(cfg, dep):
    # uniform prior over the region, summarised by its mean and covariance
    lo, hi = dep.region
    q = cfg.params["process_sigma"] or cfg.params["d_max"] / math.sqrt(6.0)
    return q, (lo + hi) / 2, np.diag((hi - lo) ** 2 / 12.0)


def _run_kf(cfg, dep, rngs):
    traj, hist = _trajectory(cfg, dep, rngs["motion"])
    q, center, sigma0 = _filter_setup(cfg, dep)
    m, n = dep.dim, dep.n_agents
    sigma = cfg.params["range_sigma"]
    model = baselines.LinearGaussianModel(
        np.eye(m), q**2 * np.eye(m), np.eye(m), sigma**2 * np.eye(m), center, sigma0
    )
    truth0 = diloc.agent_truth(dep)
    means = np.tile(center, (n, 1))
    cov = model.sigma0
    initial = float(np.linalg.norm(means - truth0))
    errors = np.empty(cfg.steps)
    for k in range(cfg.steps):
        truth = traj[k][dep.agent_rows]
        z = truth + rngs["ranging"].normal(0.0, sigma, truth.shape)
        means, cov = baselines.kf_step_batch(means, cov, z, model)
        errors[k] = np.linalg.norm(means - truth)
    return errors, np.full(cfg.steps, n), initial, hist, {}


def _run_pf(cfg, dep, rngs):
    traj, hist = _trajectory(cfg, dep, rngs["motion"])
    q, center, _ = _filter_setup(cfg, dep)
    p = cfg.params
    anchors = traj[:, dep.anchor_rows]
    pf_model = baselines.range_pf_model(anchors, p["range_sigma"], dep.region, q)
    truth0 = diloc.agent_truth(dep)
    initial = float(np.linalg.norm(truth0 - center))
    est = np.empty((cfg.steps, dep.n_agents, dep.dim))
    restarts = 0
    for c, r in enumerate(dep.agent_rows):
        d = np.linalg.norm(traj[:, r, None, :] - anchors, axis=2)
        zs = d + rngs["ranging"].normal(0.0, p["range_sigma"], d.shape)
        res = baselines.pf_run(pf_model, zs, p["n_particles"], rngs["filter"],
                               p["resample_threshold"], p["roughening"])
        est[:, c] = res.means
        restarts += len(res.restarts)
    errors = np.linalg.norm(est - traj[:, dep.agent_rows], axis=(1, 2))
    return errors, np.full(cfg.steps, dep.n_agents), initial, hist, {"pf_restarts": restarts}


_RUNNERS = {
    "diloc": _run_diloc,
    "dlre": _run_robust,
    "diland": _run_robust,
    "mobile": _run_mobile,
    "kf": _run_kf,
    "pf": _run_pf,
}


def run_replicate(cfg, replicate):
    rngs = replicate_rngs(cfg.master_seed, replicate)
    dep = build_scene(cfg, rngs["scene"])
    errors, updates, initial, hist, extra = _RUNNERS[cfg.algorithm](cfg, dep, rngs)
    return ReplicateLog(replicate, np.asarray(errors, dtype=float),
                        np.asarray(updates, dtype=np.int64), float(initial),
                        np.asarray(hist, dtype=np.int64), dep.n_agents, extra)


def _run_one(args):
    return run_replicate(*args)


def run_experiment(cfg, out_dir=None, workers=1):
    """Run every replicate of ``cfg``; write outputs when ``out_dir`` is given.

    Replicates are independent, so ``workers > 1`` runs them in separate
    processes without changing any result.
    """
    jobs = [(cfg, r) for r in range(cfg.replicates)]
    if workers > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = [_run_one(j) for j in jobs]
    result = MetricsLog(cfg, runs)
    if out_dir is not None:
        emit_outputs(result, out_dir)
    return result


# -- outputs ----------------------------------------------------------------------------


def _f(v):
    return repr(float(v))


def summary_doc(result):
    cfg = result.config
    return {
        "config": cfg.to_dict(),
        "aggregates": result.aggregates(),
        "per_replicate": result.per_replicate(),
        "seeds": {
            "master_seed": cfg.master_seed,
            "generator": "Philox",
            "purposes": list(PURPOSES),
            "spawn_keys": [[r, i] for r in range(cfg.replicates) for i in range(len(PURPOSES))],
        },
    }


def emit_outputs(result, out_dir):
    """Write ``trace.csv``, ``summary.json`` and ``histogram.csv`` into ``out_dir``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "k", "error_norm", "updates_cum"])
            for r in result.runs:
                for k, (e, u) in enumerate(zip(r.error_norm, r.updates_cum), start=1):
                    w.writerow([r.replicate, k, _f(e), int(u)])
        with open(os.path.join(out_dir, "histogram.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "neighbors", "agent_steps"])
            for r in result.runs:
                for b, c in enumerate(r.histogram):
                    w.writerow([r.replicate, b, int(c)])
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary_doc(result), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write outputs to {out_dir}: {exc}") from exc
    return out_dir
