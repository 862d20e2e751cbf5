import types

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linloc import diloc, robust, scene
from linloc.diloc import StateVector, SystemMatrices
from linloc.errors import InvalidInput, NotAbsorbing, ScheduleError
from linloc.robust import Algo, StepSchedule

SIDE = 10.0


def static_scene(seed, n=5):
    return scene.simplex_deployment(np.random.default_rng(seed), n, SIDE, 30.0)


def system(dep):
    sets = diloc.triangulate(dep)
    return sets, diloc.assemble_system(dep, sets)


def purpose_rngs(seed):
    return {p: np.random.default_rng([seed, i]) for i, p in enumerate(("ranging", "links", "comm"))}


# -- schedules ----------------------------------------------------------------------------


@pytest.mark.parametrize("sched,algo", [
    (StepSchedule.harmonic(1, 1), "dlre"),
    (StepSchedule.harmonic(1, 1), "diland"),
    (StepSchedule.constant(0.5), "diland"),
    (StepSchedule.power(1, 0.75), "dlre"),
    (StepSchedule.power(1, 1.0), "dlre"),
    (StepSchedule.power(1, 0.3), "diland"),
])
def test_schedule_accepted(sched, algo):
    assert robust.validate_schedule(sched, algo)


@pytest.mark.parametrize("sched,algo", [
    (StepSchedule.constant(0.5), "dlre"),
    (StepSchedule.power(1, 2), "dlre"),
    (StepSchedule.power(1, 2), "diland"),
    (StepSchedule.power(1, 0.5), "dlre"),
    (StepSchedule.harmonic(-1, 1), "dlre"),
    (StepSchedule.harmonic(1, 0), "diland"),
    (StepSchedule.constant(0), "diland"),
    (StepSchedule("geometric", {"r": 0.5}), "diland"),
    (StepSchedule("harmonic", {"a": 1.0}), "dlre"),
])
def test_schedule_rejected(sched, algo):
    with pytest.raises(ScheduleError):
        robust.validate_schedule(sched, algo)


def test_schedule_values_and_roundtrip():
    h = StepSchedule.harmonic(2, 10)
    assert h(0) == 0.2 and h(10) == 0.1
    assert StepSchedule.power(1, 0.5)(3) == 0.5
    assert StepSchedule.from_dict(h.to_dict()) == h


# -- noise models -------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["gaussian", "uniform", "laplace"])
def test_comm_noise_is_zero_mean(kind):
    sigma, n = 0.7, 100_000
    v = robust.CommNoise(sigma, kind).sample(np.random.default_rng(0), n)
    assert abs(v.mean()) <= 3 * sigma / np.sqrt(n)
    assert v.std() == pytest.approx(sigma, rel=0.02)


def test_link_model():
    rng = np.random.default_rng(0)
    assert robust.LinkModel(1.0).sample(rng, (3, 3)).all()
    e = robust.LinkModel(0.3).sample(rng, (200, 200))
    assert e.mean() == pytest.approx(0.3, abs=0.01)
    with pytest.raises(InvalidInput):
        robust.LinkModel(0.0).sample(rng, (2, 2))


def test_ranging_noise_is_symmetric_and_biased():
    d = np.full((40, 40), 5.0)
    np.fill_diagonal(d, 0)
    meas = robust.RangingNoise(bias=0.2, sigma=0.05).measure(np.random.default_rng(0), d)
    np.testing.assert_array_equal(meas, meas.T)
    assert np.all(np.diag(meas) == 0)
    off = meas[np.triu_indices(40, 1)]
    assert off.mean() == pytest.approx(5.2, abs=4 * 0.05 / np.sqrt(off.size))


def test_consistent_estimator_is_running_mean():
    est = robust.ConsistentRangeEstimator(2)
    samples = [np.array([[0, x], [x, 0]]) for x in (1.0, 2.0, 6.0)]
    for s in samples:
        est.update(s)
    assert est.count == 3
    assert est.estimate[0, 1] == pytest.approx(3.0)


def test_consistent_estimator_concentrates():
    d, sigma, n, trials = 4.0, 0.3, 50, 1000
    rng = np.random.default_rng(1)
    hits = 0
    for _ in range(trials):
        est = robust.ConsistentRangeEstimator(1)
        for x in rng.normal(d, sigma, n):
            est.update(np.array([[x]]))
        hits += abs(est.estimate[0, 0] - d) <= 5 * sigma / np.sqrt(n)
    assert hits >= 0.99 * trials


def test_estimator_error_shrinks_with_samples():
    rng = np.random.default_rng(2)
    est = robust.ConsistentRangeEstimator(1)
    errs = {}
    for k in range(1, 10_001):
        est.update(np.array([[3.0 + rng.normal(0, 0.5)]]))
        if k in (10, 10_000):
            errs[k] = abs(est.estimate[0, 0] - 3.0)
    assert errs[10_000] < 0.05


# -- weights from distances ------------------------------------------------------------------


def test_weights_from_true_distances_match_system():
    dep = static_scene(0)
    sets, M = system(dep)
    W = robust.weights_from_distances(dep, sets, dep.distances())
    np.testing.assert_allclose(W.P, M.P, atol=1e-12)
    np.testing.assert_allclose(W.B, M.B, atol=1e-12)


def test_noisy_weights_stay_normalised():
    dep = static_scene(1)
    sets, _ = system(dep)
    meas = robust.RangingNoise(0.0, 0.2).measure(np.random.default_rng(0), dep.distances())
    W = robust.weights_from_distances(dep, sets, meas)
    np.testing.assert_allclose(W.P.sum(1) + W.B.sum(1), 1.0, atol=1e-12)
    assert W.P.min() >= 0 and W.B.min() >= 0


# -- iterations -------------------------------------------------------------------------------


@given(st.integers(0, 10_000))
def test_noiseless_steps_are_diloc(seed):
    dep = static_scene(seed)
    sets, M = system(dep)
    u = diloc.anchor_positions(dep)
    x = np.random.default_rng(seed).uniform(-20, 20, (dep.n_agents, 2))
    ref = diloc.diloc_step(StateVector(x, u), M).x
    np.testing.assert_array_equal(robust.dlre_step(x, M, u, 1.0), ref)
    np.testing.assert_array_equal(robust.diland_step(x, M, u, 1.0), ref)


def test_all_links_dormant_shrinks_state():
    dep = static_scene(3)
    _, M = system(dep)
    u = diloc.anchor_positions(dep)
    x = np.random.default_rng(0).normal(size=(dep.n_agents, 2))
    off_p = np.zeros(M.P.shape, bool)
    off_b = np.zeros(M.B.shape, bool)
    out = robust.dlre_step(x, M, u, 0.3, off_p, off_b, 0.5, 0.5)
    np.testing.assert_allclose(out, 0.7 * x)


def test_active_links_are_magnified_by_q():
    M = SystemMatrices(np.array([[0.0]]), np.array([[0.5, 0.5]]))
    u = np.array([[2.0], [4.0]])
    out = robust.dlre_step(np.zeros((1, 1)), M, u, 1.0, None, np.array([[True, False]]), 1.0, 0.5)
    assert out[0, 0] == pytest.approx(0.5 / 0.5 * 2.0)


def test_zero_probability_on_weighted_link_is_invalid():
    M = SystemMatrices(np.array([[0.0]]), np.array([[0.5, 0.5]]))
    with pytest.raises(InvalidInput):
        robust.dlre_step(np.zeros((1, 1)), M, np.zeros((2, 1)), 0.5, q_b=np.array([[0.0, 1.0]]))


def test_innovation_expectation():
    # sampled noisy weights, link drops and comm noise at a fixed state; the
    # mean bracketed innovation should be (P + S_P) x + (B + S_B) u
    rng = np.random.default_rng(4)
    dep = static_scene(7, n=3)
    _, M = system(dep)
    u = diloc.anchor_positions(dep)
    x = rng.uniform(0, SIDE, (3, 2))
    S_P = np.array([[0, .02, -.01], [.01, 0, .01], [-.02, .01, 0]]) * (M.P != 0)
    S_B = np.array([[.01, 0, -.01], [0, .02, 0], [.01, -.01, .02]]) * (M.B != 0)
    R, q = 100_000, 0.6
    P_hat = M.P + S_P + rng.normal(0, 0.05, (R, 3, 3)) * (M.P != 0)
    B_hat = M.B + S_B + rng.normal(0, 0.05, (R, 3, 3)) * (M.B != 0)
    W = types.SimpleNamespace(P=P_hat, B=B_hat)
    e_p, e_b = rng.random((R, 3, 3)) < q, rng.random((R, 3, 3)) < q
    v_p, v_b = rng.normal(0, 0.5, (R, 3, 3, 2)), rng.normal(0, 0.5, (R, 3, 3, 2))
    innov = robust.dlre_step(np.broadcast_to(x, (R, 3, 2)), W, u, 1.0, e_p, e_b, q, q, v_p, v_b)
    expect = (M.P + S_P) @ x + (M.B + S_B) @ u
    se = innov.std(axis=0) / np.sqrt(R)
    assert np.all(np.abs(innov.mean(axis=0) - expect) <= 4 * se)


def test_diland_single_sample_uses_single_shot_weights():
    dep = static_scene(5)
    sets, _ = system(dep)
    meas = robust.RangingNoise(0.0, 0.1).measure(np.random.default_rng(0), dep.distances())
    est = robust.ConsistentRangeEstimator(len(meas))
    bar = robust.weights_from_distances(dep, sets, est.update(meas))
    hat = robust.weights_from_distances(dep, sets, meas)
    np.testing.assert_array_equal(bar.P, hat.P)
    np.testing.assert_array_equal(bar.B, hat.B)


def test_dlre_unbiased_noise_converges():
    dep = static_scene(11)
    sets, _ = system(dep)
    noise = robust.RobustNoise(link_q=0.8, comm_sigma=0.1)
    x0 = np.random.default_rng(0).uniform(0, SIDE, (dep.n_agents, 2))
    _, errs = robust.run_robust("dlre", dep, sets, x0, StepSchedule.harmonic(1, 1), 100_000,
                                noise, purpose_rngs(0), record_every=1000)
    assert errs[-1] <= 0.05 * SIDE


def test_diland_beats_biased_dlre():
    dep = static_scene(12)
    sets, _ = system(dep)
    x0 = np.random.default_rng(0).uniform(0, SIDE, (dep.n_agents, 2))
    jitter = robust.RobustNoise(range_sigma=0.1)
    sched = StepSchedule.constant(0.5)
    _, e_diland = robust.run_robust("diland", dep, sets, x0, sched, 10_000, jitter, purpose_rngs(1))
    _, e_dlre = robust.run_robust("dlre", dep, sets, x0, StepSchedule.harmonic(1, 1), 10_000,
                                  jitter, purpose_rngs(1), weights="frozen")
    assert e_diland[-1] < e_dlre[-1]


def test_run_rejects_bad_schedule():
    dep = static_scene(0)
    sets, _ = system(dep)
    with pytest.raises(ScheduleError):
        robust.run_robust(Algo.DLRE, dep, sets, np.zeros((5, 2)), StepSchedule.constant(0.1), 5,
                          robust.RobustNoise(), purpose_rngs(0))


# -- biased limit -------------------------------------------------------------------------------


def test_bias_free_limit_is_closed_form():
    dep = static_scene(6)
    _, M = system(dep)
    u = diloc.anchor_positions(dep)
    Z = np.zeros_like
    lim = robust.bias_of_limit(M.P, Z(M.P), M.B, Z(M.B), u)
    np.testing.assert_allclose(lim, diloc.closed_form_limit(M, u), atol=1e-12)
    np.testing.assert_allclose(lim, diloc.agent_truth(dep), atol=1e-9)


def test_anchor_perturbation_shift():
    # one agent, three anchors: P = 0 so the shift is S_B u exactly
    dep = scene.simplex_deployment(np.random.default_rng(0), 1, SIDE, 30.0)
    _, M = system(dep)
    u = diloc.anchor_positions(dep)
    S_B = np.array([[0.01, -0.02, 0.01]])
    lim = robust.bias_of_limit(M.P, np.zeros((1, 1)), M.B, S_B, u)
    shift = np.linalg.solve(np.eye(1) - M.P, S_B @ u)
    np.testing.assert_allclose(lim - diloc.agent_truth(dep), shift, atol=1e-12)


def test_bias_limit_singular():
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(NotAbsorbing):
        robust.bias_of_limit(P, np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 1)),
                             np.zeros((1, 2)))


def test_run_matches_explicit_steps():
    # the driver batches its draws per block; replaying them through dlre_step
    # one step at a time must give the same trajectory
    dep = static_scene(13)
    sets, _ = system(dep)
    noise = robust.RobustNoise(link_q=0.7, comm_sigma=0.2, range_sigma=0.05)
    x0 = np.random.default_rng(0).uniform(0, SIDE, (dep.n_agents, 2))
    steps, sched = 40, StepSchedule.harmonic(1, 1)
    x_run, errs = robust.run_robust("dlre", dep, sets, x0, sched, steps, noise, purpose_rngs(3))
    g = purpose_rngs(3)
    n, n_anc = dep.n_agents, dep.n_anchors
    meas = robust.RangingNoise(0, 0.05).measure(g["ranging"], dep.distances(), steps)
    e_p, e_b = g["links"].random((steps, n, n)) < 0.7, g["links"].random((steps, n, n_anc)) < 0.7
    v_p, v_b = g["comm"].normal(0, 0.2, (steps, n, n, 2)), g["comm"].normal(0, 0.2, (steps, n, n_anc, 2))
    layout = robust.SetLayout(dep, sets)
    u, x = diloc.anchor_positions(dep), x0.copy()
    for k in range(steps):
        W = layout.matrices(meas[k])
        x = robust.dlre_step(x, W, u, sched(k), e_p[k], e_b[k], 0.7, 0.7, v_p[k], v_b[k])
    np.testing.assert_allclose(x_run, x, atol=1e-12)
    assert errs[-1] == pytest.approx(np.linalg.norm(x - diloc.agent_truth(dep)), abs=1e-12)


def test_diland_run_matches_explicit_steps():
    dep = static_scene(14)
    sets, _ = system(dep)
    noise = robust.RobustNoise(range_sigma=0.1)
    x0 = np.zeros((dep.n_agents, 2))
    sched = StepSchedule.constant(0.5)
    x_run, _ = robust.run_robust("diland", dep, sets, x0, sched, 30, noise, purpose_rngs(4))
    g = purpose_rngs(4)
    est = robust.ConsistentRangeEstimator(len(dep.positions))
    layout = robust.SetLayout(dep, sets)
    u, x = diloc.anchor_positions(dep), x0
    for k in range(30):
        d = robust.RangingNoise(0, 0.1).measure(g["ranging"], dep.distances())
        x = robust.diland_step(x, layout.matrices(est.update(d)), u, sched(k))
    np.testing.assert_allclose(x_run, x, atol=1e-10)
