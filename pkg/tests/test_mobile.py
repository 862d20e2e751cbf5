import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from linloc import geometry, mobile, scene
from linloc.errors import InvalidInput
from linloc.mobile import (
    ConnectivityLog, Gate, MobileParams, MobileSimulation, MotionModel, MotionNoise, RowClass,
    Update,
)

SIDE = 20.0
PURPOSES = ("motion", "ranging", "odometry", "schedule")


def rngs(seed):
    return {p: np.random.default_rng([seed, i]) for i, p in enumerate(PURPOSES)}


def sim_for(n, r, seed, **kw):
    rng = np.random.default_rng(seed)
    dep = scene.uniform_deployment(rng, n, 1, SIDE, r)
    x0 = rng.uniform(0, SIDE, (n, 2))
    return MobileSimulation(dep, x0, rngs=rngs(seed), **kw)


class ScriptedRng:
    """Stands in for a generator; ``uniform`` returns the listed fractions of its range."""

    def __init__(self, fractions):
        self.fractions = list(fractions)

    def uniform(self, lo, hi, n):
        return np.full(n, lo + (hi - lo) * self.fractions.pop(0))


# -- motion ------------------------------------------------------------------------------------


def test_static_model_does_not_move():
    dep = scene.uniform_deployment(np.random.default_rng(0), 5, 1, SIDE, 2.0)
    new, mv = mobile.motion_step(dep, MotionModel("static"), np.random.default_rng(0))
    assert np.all(mv.delta == 0)
    np.testing.assert_array_equal(new.positions, dep.positions)


def test_full_step_east():
    region = (np.zeros(2), np.full(2, SIDE))
    mv = mobile.sample_motion([[5.0, 5.0]], region, MotionModel(d_max=5.0), ScriptedRng([1.0, 0.0]))
    np.testing.assert_allclose(mv.delta, [[5.0, 0.0]], atol=1e-12)


def test_step_leaving_region_is_redrawn():
    region = (np.zeros(2), np.full(2, SIDE))
    # first draw heads east out of the box, the second heads west
    mv = mobile.sample_motion([[19.0, 5.0]], region, MotionModel(d_max=5.0),
                              ScriptedRng([1.0, 0.0, 1.0, 0.5]))
    np.testing.assert_allclose(mv.delta, [[-5.0, 0.0]], atol=1e-12)


def test_random_waypoint_stays_in_box():
    rng = np.random.default_rng(3)
    dep = scene.uniform_deployment(rng, 30, 1, SIDE, 2.0)
    model = MotionModel(d_max=5.0)
    for _ in range(3000):
        dep, mv = mobile.motion_step(dep, model, rng)
        assert np.all((dep.positions >= 0) & (dep.positions <= SIDE))
        assert np.all(mv.dist <= 5.0)


def test_anchors_can_be_held_still():
    rng = np.random.default_rng(4)
    dep = scene.uniform_deployment(rng, 5, 2, SIDE, 2.0)
    new, _ = mobile.motion_step(dep, MotionModel(), rng, anchors_move=False)
    np.testing.assert_array_equal(new.positions[dep.anchor_rows], dep.positions[dep.anchor_rows])
    assert np.any(new.positions[dep.agent_rows] != dep.positions[dep.agent_rows])


def test_invalid_motion_model():
    with pytest.raises(InvalidInput):
        MotionModel("levy")
    with pytest.raises(InvalidInput):
        MotionModel(d_max=0)


# -- motion noise --------------------------------------------------------------------------------


def _one_move(n, dist=2.0, theta=0.3):
    return mobile.Motion(
        np.tile([dist * math.cos(theta), dist * math.sin(theta)], (n, 1)),
        np.full(n, dist), np.tile([math.cos(theta), math.sin(theta)], (n, 1)), np.full(n, theta),
    )


def test_odometry_variance_grows_with_distance_travelled():
    n, K = 200_000, 0.05
    noise = MotionNoise(K_d=K, K_theta=K)
    mv = _one_move(n)
    for D in (4.0, 16.0):
        est = noise.measured_motion(mv, np.full(n, D), np.random.default_rng(0))
        d_hat = np.linalg.norm(est, axis=1)
        th_hat = np.arctan2(est[:, 1], est[:, 0])
        assert d_hat.var() == pytest.approx(K**2 * D, rel=0.03)
        assert th_hat.var() == pytest.approx(K**2 * D, rel=0.03)


def test_step_basis_uses_current_step():
    n, K = 200_000, 0.05
    mv = _one_move(n, dist=3.0)
    est = MotionNoise(K_d=K, basis="step").measured_motion(mv, np.full(n, 100.0),
                                                            np.random.default_rng(1))
    assert np.linalg.norm(est, axis=1).var() == pytest.approx(K**2 * 3.0, rel=0.03)


def test_noiseless_odometry_is_exact():
    mv = _one_move(3)
    np.testing.assert_array_equal(MotionNoise().measured_motion(mv, np.ones(3), None), mv.delta)


def test_range_noise_variance_grows_with_time():
    noise = MotionNoise(K_r=0.01)
    assert noise.range_sigma(0) == 0
    d = np.full((300, 300), 10.0)
    np.fill_diagonal(d, 0)
    meas = noise.measure_ranges(d, 400, np.random.default_rng(2))
    off = meas[np.triu_indices(300, 1)] - 10.0
    assert off.var() == pytest.approx(0.01**2 * 400, rel=0.03)
    np.testing.assert_array_equal(meas, meas.T)


def test_negative_noise_rejected():
    with pytest.raises(InvalidInput):
        MotionNoise(K_d=-1)
    with pytest.raises(InvalidInput):
        MotionNoise(basis="hourly")


# -- parameters and single updates ----------------------------------------------------------------


def test_params_validation_and_floor():
    p = MobileParams(beta=0.01, alpha_anchor=0.01, alpha_k=0.5)
    assert p.anchor_weight_floor == pytest.approx(0.02)
    for bad in ({"beta": 0}, {"alpha_anchor": 1}, {"alpha_k": 0.001}, {"alpha_k": 1.0},
                {"epsilon": 0}, {"update_mode": "async"}):
        with pytest.raises(InvalidInput):
            MobileParams(**bad)


def test_dead_reckoning_keeps_error():
    x_true, x = np.array([3.0, 4.0]), np.array([5.0, 1.0])
    move = np.array([0.5, -0.25])
    new = mobile.opportunistic_update(x, 1.0, move)
    np.testing.assert_allclose((x_true + move) - new, x_true - x)


def test_anchor_set_scales_error_by_beta():
    anchors = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    x_true = np.array([1.0, 2.0])
    w = np.linalg.solve(np.vstack([anchors.T, np.ones(3)]), np.append(x_true, 1.0))
    x = np.array([9.0, -3.0])
    new = mobile.opportunistic_update(x, 0.01, np.zeros(2), anchors, w, beta=0.01)
    np.testing.assert_allclose(x_true - new, 0.01 * (x_true - x), atol=1e-12)


def test_alpha_one_ignores_neighbors():
    x = np.array([1.0, 1.0])
    new = mobile.opportunistic_update(x, 1.0, np.ones(2), np.zeros((3, 2)), np.full(3, 1 / 3))
    np.testing.assert_array_equal(new, x + 1)


@pytest.mark.parametrize("alpha,has_set", [(0.5, False), (0.001, True), (0.0, True), (1.5, True)])
def test_illegal_alpha(alpha, has_set):
    args = (np.zeros((3, 2)), np.full(3, 1 / 3)) if has_set else ()
    with pytest.raises(InvalidInput):
        mobile.opportunistic_update(np.zeros(2), alpha, np.zeros(2), *args, beta=0.01)


# -- time-varying matrices --------------------------------------------------------------------------


def _dep(n_agents=4, n_anchors=2):
    rng = np.random.default_rng(0)
    return scene.uniform_deployment(rng, n_agents, n_anchors, SIDE, 5.0)


def test_no_updates_is_identity():
    dep = _dep()
    P, B, classes = mobile.assemble_timevarying(dep, [])
    np.testing.assert_array_equal(P, np.eye(4))
    assert not B.any() and set(classes) == {RowClass.IDENTITY}


def test_agent_only_set_is_stochastic():
    dep = _dep()
    up = Update(0, np.array([1, 2, 3]), np.array([0.2, 0.3, 0.5]), 0.01)
    P, B, classes = mobile.assemble_timevarying(dep, [up])
    assert P[0].sum() == pytest.approx(1.0, abs=1e-15)
    assert not B[0].any()
    assert classes[0] is RowClass.STOCHASTIC
    assert P[0, 0] == 0.01


def test_anchor_in_set_is_sub_stochastic():
    dep = _dep()
    params = MobileParams()
    w_anchor = params.anchor_weight_floor * 3
    up = Update(1, np.array([0, 2, 4]), np.array([0.5, 0.5 - w_anchor, w_anchor]), 0.01)
    P, B, classes = mobile.assemble_timevarying(dep, [up])
    assert classes[1] is RowClass.SUB_STOCHASTIC
    assert P[1].sum() == pytest.approx(1 - 0.99 * w_anchor)
    assert P[1].sum() <= 1 - params.alpha_anchor
    assert P[1].sum() + B[1].sum() == pytest.approx(1.0)


def test_product_monitor_identity_history():
    norms = mobile.error_product_monitor([np.eye(3)] * 10)
    np.testing.assert_array_equal(norms, 1.0)
    with pytest.raises(InvalidInput):
        mobile.error_product_monitor([])


def test_product_monitor_cycle_through_anchor_updates():
    # one agent per step mixes with three anchors; after a full cycle the product is beta * I
    beta, n = 0.01, 4
    rng = np.random.default_rng(0)
    dep = scene.uniform_deployment(rng, n, 3, SIDE, 5.0)
    anchors = dep.anchor_rows
    history = []
    for cycle in range(3):
        for i in range(n):
            up = Update(i, anchors, np.array([0.3, 0.3, 0.4]), beta)
            history.append(mobile.assemble_timevarying(dep, [up])[0])
    norms = mobile.error_product_monitor(history)
    for c in range(3):
        assert norms[(c + 1) * n - 1] == pytest.approx(beta ** (c + 1), rel=1e-12)


def test_monitor_rows_shortcut_matches_full_product():
    rng = np.random.default_rng(1)
    full, fast = mobile.ErrorProductMonitor(5), mobile.ErrorProductMonitor(5)
    for _ in range(20):
        P = np.eye(5)
        rows = rng.choice(5, 2, replace=False)
        P[rows] = rng.dirichlet(np.ones(5), 2) * 0.9
        full.update(P)
        fast.update(P, rows)
    np.testing.assert_allclose(fast.product, full.product, atol=1e-15)


# -- connectivity log ----------------------------------------------------------------------------------


def test_anchor_information_travels_over_hops():
    log = ConnectivityLog(3)
    log.record(3, 0, True, [])
    log.record(5, 1, False, [0])
    log.record(9, 2, False, [1])
    np.testing.assert_array_equal(log.info_time, [3, 3, 3])
    assert log.arrivals == [[3], [5], [9]]
    np.testing.assert_array_equal(log.gaps(2, 20), [9, 11])


def test_simultaneous_updates_read_previous_times():
    log = ConnectivityLog(2)
    log.record_step(4, [(0, True, []), (1, False, [0])])
    np.testing.assert_array_equal(log.info_time, [4, -1])
    log.record_step(5, [(1, False, [0])])
    assert log.info_time[1] == 4


def test_stale_information_is_not_an_arrival():
    log = ConnectivityLog(2)
    log.record(1, 0, True, [])
    log.record(2, 1, False, [0])
    log.record(3, 1, False, [0])  # same information again
    assert log.arrivals[1] == [2]
    s = log.summary(10)
    assert s == {"arrivals": [1, 1], "max_gap": [9, 8], "all_reached": True}


# -- feasibility ---------------------------------------------------------------------------------------


def test_single_anchor_feasible():
    v = mobile.feasibility_check(1, 5, 2, 0, 2)
    assert v and str(v) == "Feasible"


def test_no_anchor_infeasible():
    v = mobile.feasibility_check(0, 5, 2, 0, 2)
    assert not v and "at least one anchor" in v.reasons[0]


def test_static_single_anchor_infeasible():
    v = mobile.feasibility_check(1, 5, 0, 0, 2)
    assert not v and len(v.reasons) == 1 and "m + 1" in v.reasons[0]


@pytest.mark.parametrize("args", [(-1, 5, 2, 0, 2), (1, 5, 3, 0, 2), (1, 5, 0, 0, 0), (1.5, 5, 0, 0, 2)])
def test_feasibility_bad_input(args):
    with pytest.raises(InvalidInput):
        mobile.feasibility_check(*args)


# -- noise gates -------------------------------------------------------------------------------------------


TRI = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
POINT = np.array([1.0, 1.0])


def _gate(i_dists, eps):
    return mobile.noisy_update_gates(i_dists, geometry.squared_distances(TRI), eps)


def test_gate_accepts_clean_interior_point():
    gate, rel, w = _gate(np.linalg.norm(TRI - POINT, axis=1), 0.2)
    assert gate is Gate.ACCEPT and rel == pytest.approx(0, abs=1e-12)
    assert w.sum() == 1.0 or abs(w.sum() - 1.0) <= 2e-16


def test_gate_rejects_wrong_sign():
    d = np.linalg.norm(TRI - POINT, axis=1)
    d[0] = d[1] + 4.0 + 1.0  # breaks the triangle inequality of (point, v0, v1)
    gate, _, w = _gate(d, 0.2)
    assert gate is Gate.REJECT_SIGN and w is None


def test_gate_rejects_large_inclusion_error():
    d = np.linalg.norm(TRI - POINT, axis=1)

    def rel_at(t):
        return mobile.noisy_update_gates(d * t, geometry.squared_distances(TRI), 10.0)[1]

    t = brentq(lambda t: rel_at(t) - 0.3, 1.0, 1.5)
    gate, rel, w = _gate(d * t, 0.2)
    assert gate is Gate.REJECT_ERROR and rel == pytest.approx(0.3, abs=1e-9) and w is None
    assert _gate(d * t, 0.35)[0] is Gate.ACCEPT


@given(st.floats(0.05, 0.9), st.floats(0.05, 0.9), st.floats(0.0, 0.05))
def test_accepted_weights_sum_to_one(a, b, jitter):
    if a + b >= 0.95:
        return
    q = TRI[0] + a * (TRI[1] - TRI[0]) + b * (TRI[2] - TRI[0])
    d = np.linalg.norm(TRI - q, axis=1) * (1 + jitter * np.array([1, -1, 0.5]))
    gate, _, w = _gate(d, 0.5)
    if gate is Gate.ACCEPT:
        assert abs(w.sum() - 1.0) <= 4e-16 and w.min() > 0


def test_gate_needs_one_distance_per_member():
    with pytest.raises(InvalidInput):
        _gate(np.ones(2), 0.2)


# -- simulation ------------------------------------------------------------------------------------------------


def test_noiseless_error_dynamics_are_exact():
    sim = sim_for(10, 4.6, 0, check_dynamics=True)
    res = sim.run(1000)
    assert res.updates.sum() > 500
    assert res.max_dynamics_residual <= 1e-12


def test_row_classes_and_self_weight():
    sim = sim_for(10, 4.6, 1)
    seen = set()
    for _ in range(300):
        updates, _ = sim.find_updates()
        P, B, classes = mobile.assemble_timevarying(sim.dep, updates)
        for i, c in enumerate(classes):
            s = P[i].sum()
            if c is RowClass.IDENTITY:
                assert P[i, i] == 1 and s == 1
            else:
                assert P[i, i] >= sim.params.beta and P[i].min() >= 0
                if c is RowClass.SUB_STOCHASTIC:
                    assert s <= 1 - sim.params.alpha_anchor + 1e-12
                else:
                    assert s == pytest.approx(1.0, abs=1e-12)
                assert s + B[i].sum() == pytest.approx(1.0, abs=1e-12)
            seen.add(c)
        sim.step()
    assert seen == set(RowClass)


def test_monitor_matches_error_dynamics():
    sim = sim_for(10, 4.6, 2, monitor=True)
    e0 = sim.error.copy()
    res = sim.run(400)
    np.testing.assert_allclose(sim.monitor.product @ e0, sim.error, atol=1e-9)
    assert np.all(np.diff(res.product_norms) <= 1e-12)


@pytest.mark.parametrize("n", [10, 20])
def test_connected_runs_converge(n):
    # dense radio range so that anchor information reaches every agent often
    for seed in range(2):
        res = sim_for(n, 4.6, seed).run(3000)
        if max(res.connectivity.summary(3000)["max_gap"]) < 3000:
            assert res.errors[-1] < 1e-3 * SIDE


def test_sequential_mode_updates_one_agent():
    sim = sim_for(10, 4.6, 3, params=MobileParams(update_mode="sequential"))
    res = sim.run(200)
    assert res.updates.max() == 1 and res.updates.sum() > 0


def test_histogram_counts_every_agent_step():
    res = sim_for(7, 2.0, 4).run(50)
    assert res.neighbor_hist.sum() == 7 * 50


def test_simulation_is_deterministic():
    a = sim_for(8, 3.0, 5, noise=MotionNoise(0.01, 0.01, 0.01), params=MobileParams(epsilon=0.2))
    b = sim_for(8, 3.0, 5, noise=MotionNoise(0.01, 0.01, 0.01), params=MobileParams(epsilon=0.2))
    np.testing.assert_array_equal(a.run(200).errors, b.run(200).errors)


@pytest.mark.xfail(strict=True, reason="at r = 2 m five agents almost never meet; see the notes on sparse radio range")
def test_product_norm_in_sparse_five_agent_regime():
    res = sim_for(5, 2.0, 0, monitor=True).run(3000)
    assert res.product_norms[-1] < 1e-3
