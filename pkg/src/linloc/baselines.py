"""Bayesian reference estimators: the Kalman filter and a bootstrap particle filter.

Both track a state ``x_k`` from measurements ``z_k`` under a Markov dynamic
model. The Kalman filter is exact for linear-Gaussian models and serves as
the oracle for the particle filter there.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateMeasurement, DegenerateWeights, InvalidInput

log = logging.getLogger(__name__)


# -- Kalman filter ---------------------------------------------------------------


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            raise InvalidInput(f"mean {self.mean.shape} and cov {self.cov.shape} disagree")


@dataclass
class LinearGaussianModel:
    """``x_k = F x_{k-1} + w``, ``w ~ N(0, Q)``; ``z_k = H x_k + v``, ``v ~ N(0, R)``."""

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    mu0: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self):
        for name in ("F", "Q", "H", "R", "sigma0"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        self.mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        n, p = self.F.shape[0], self.H.shape[0]
        shapes = {"F": (n, n), "Q": (n, n), "H": (p, n), "R": (p, p), "sigma0": (n, n)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise InvalidInput(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.mu0.shape != (n,):
            raise InvalidInput("mu0 does not match the state dimension")
        for name in ("Q", "R", "sigma0"):
            m = getattr(self, name)
            if np.min(np.linalg.eigvalsh((m + m.T) / 2)) < -1e-10 * max(1.0, np.abs(m).max()):
                raise InvalidInput(f"{name} must be positive semidefinite")

    @property
    def dim(self):
        return self.F.shape[0]

    def prior(self):
        return GaussianBelief(self.mu0.copy(), self.sigma0.copy())

    def simulate(self, steps, rng):
        """Draw a state trajectory ``x_1..x_steps`` and its measurements."""
        x = rng.multivariate_normal(self.mu0, self.sigma0)
        xs, zs = [], []
        zero_n, zero_p = np.zeros(self.dim), np.zeros(self.H.shape[0])
        for _ in range(steps):
            x = self.F @ x + rng.multivariate_normal(zero_n, self.Q)
            xs.append(x)
            zs.append(self.H @ x + rng.multivariate_normal(zero_p, self.R))
        return np.array(xs), np.array(zs)


def _symmetrize(a):
    return (a + a.T) / 2


def kf_predict(b, model):
    """``m = F m``, ``P = Q + F P F^T``."""
    if b.mean.shape[0] != model.dim:
        raise InvalidInput("belief and model dimensions differ")
    F = model.F
    return GaussianBelief(F @ b.mean, _symmetrize(model.Q + F @ b.cov @ F.T))


def kf_update(b, z, model, cond_max=1e14):
    """Measurement update with gain ``K = P H^T S^{-1}``, ``S = H P H^T + R``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    H = model.H
    if b.mean.shape[0] != model.dim or z.shape != (H.shape[0],):
        raise InvalidInput("measurement, belief and model dimensions disagree")
    S = H @ b.cov @ H.T + model.R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > cond_max:
        raise DegenerateMeasurement("innovation covariance is singular")
    K = np.linalg.solve(S.T, (b.cov @ H.T).T).T
    mean = b.mean + K @ (z - H @ b.mean)
    cov = b.cov - K @ H @ b.cov
    return GaussianBelief(mean, _symmetrize(cov))


def kf_step_batch(means, cov, zs, model):
    """Predict and update many states that share one model and covariance.

    ``means`` is ``(N, n)`` and ``zs`` ``(N, p)``; the covariance recursion
    does not depend on the data, so one gain serves every row.
    """
    prior = kf_predict(GaussianBelief(np.zeros(model.dim), cov), model)
    H, P = model.H, prior.cov
    S = H @ P @ H.T + model.R
    if np.linalg.cond(S) > 1e14:
        raise DegenerateMeasurement("innovation covariance is singular")
    K = np.linalg.solve(S.T, (P @ H.T).T).T
    pred = np.asarray(means, dtype=float) @ model.F.T
    post = pred + (np.asarray(zs, dtype=float) - pred @ H.T) @ K.T
    return post, _symmetrize(P - K @ H @ P)


def kf_filter(model, zs):
    """Run predict/update over ``zs``; returns filtered means and covariances."""
    b = model.prior()
    means, covs = [], []
    for z in zs:
        b = kf_update(kf_predict(b, model), z, model)
        means.append(b.mean)
        covs.append(b.cov)
    return np.array(means), np.array(covs)


# -- particle filter -------------------------------------------------------------------


@dataclass
class ParticleSet:
    particles: np.ndarray  # (N_s, n)
    weights: np.ndarray  # (N_s,)

    @property
    def mean(self):
        return self.weights @ self.particles

    @property
    def ess(self):
        return 1.0 / np.sum(self.weights**2)


@dataclass
class PFModel:
    """Generative model for :func:`pf_run`.

    ``sample_prior(rng, n)`` draws ``n`` initial states, ``propagate(rng, x, k)``
    pushes particles through the dynamics including process noise and
    ``log_likelihood(z, x, k)`` scores them against a measurement.
    """

    sample_prior: Callable
    propagate: Callable
    log_likelihood: Callable


def linear_gaussian_pf_model(model):
    """Bootstrap particle-filter view of a :class:`LinearGaussianModel`."""
    Rinv = np.linalg.inv(model.R)
    zero = np.zeros(model.dim)

    def sample_prior(rng, n):
        return rng.multivariate_normal(model.mu0, model.sigma0, size=n)

    def propagate(rng, x, k):
        return x @ model.F.T + rng.multivariate_normal(zero, model.Q, size=len(x))

    def log_likelihood(z, x, k):
        r = z - x @ model.H.T
        return -0.5 * np.einsum("ij,jk,ik->i", r, Rinv, r)

    return PFModel(sample_prior, propagate, log_likelihood)


def range_pf_model(anchors, sigma_r, region, process_sigma):
    """Track one node from noisy ranges to known ``anchors`` (Gaussian range
    noise), with a random-walk motion prior and a uniform prior over
    ``region``. ``anchors`` is ``(M, m)``, or ``(T, M, m)`` for anchors whose
    positions change with the step index."""
    anchors = np.asarray(anchors, dtype=float)
    lo, hi = region
    dim = anchors.shape[-1]
    if anchors.ndim == 2:
        anchors = anchors[None]

    def sample_prior(rng, n):
        return rng.uniform(lo, hi, size=(n, dim))

    def propagate(rng, x, k):
        return x + rng.normal(0.0, process_sigma, size=x.shape)

    def log_likelihood(z, x, k):
        a = anchors[min(k, len(anchors) - 1)]
        d = np.linalg.norm(x[:, None, :] - a[None], axis=2)
        return -0.5 * np.sum((d - z) ** 2, axis=1) / sigma_r**2

    return PFModel(sample_prior, propagate, log_likelihood)


def systematic_resample(weights, rng):
    """Indices of a systematic resample: one uniform offset, ``N`` evenly spaced points."""
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(max=n - 1)


@dataclass
class PFResult:
    means: np.ndarray  # (steps, n)
    ess: np.ndarray  # effective sample size after each update
    resamples: int
    restarts: list = field(default_factory=list)  # steps whose weights underflowed
    history: list = None  # ParticleSet per step when requested


def pf_run(model, zs, n_particles, rng, resample_threshold=0.5, roughening=0.0,
           keep_history=False, strict=False):
    """Bootstrap particle filter over the measurement sequence ``zs``.

    Each step propagates the particles, reweights them by the likelihood and,
    when the effective sample size drops below
    ``resample_threshold * n_particles``, resamples systematically. If every
    weight underflows the particles restart with uniform weights (and the
    step is recorded), or :class:`DegenerateWeights` is raised when
    ``strict``.
    """
    if int(n_particles) != n_particles or n_particles < 1:
        raise InvalidInput("n_particles must be a positive integer")
    x = np.asarray(model.sample_prior(rng, n_particles), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.full(n_particles, 1.0 / n_particles)
    means, ess, restarts, history = [], [], [], []
    resamples = 0
    for k, z in enumerate(zs):
        x = model.propagate(rng, x, k)
        logw = np.log(w) + model.log_likelihood(np.asarray(z, dtype=float), x, k)
        top = np.max(logw)
        if not np.isfinite(top):
            if strict:
                raise DegenerateWeights(f"all particle weights vanished at step {k}")
            log.warning("particle weights vanished at step %d; restarting uniformly", k)
            restarts.append(k)
            w = np.full(n_particles, 1.0 / n_particles)
        else:
            w = np.exp(logw - top)
            w /= w.sum()
        ps = ParticleSet(x, w)
        means.append(ps.mean)
        ess.append(ps.ess)
        if keep_history:
            history.append(ParticleSet(x.copy(), w.copy()))
        if ps.ess < resample_threshold * n_particles:
            x = x[systematic_resample(w, rng)]
            if roughening:
                x = x + rng.normal(0.0, roughening, size=x.shape)
            w = np.full(n_particles, 1.0 / n_particles)
            resamples += 1
    return PFResult(np.array(means), np.array(ess), resamples, restarts,
                    history if keep_history else None)
