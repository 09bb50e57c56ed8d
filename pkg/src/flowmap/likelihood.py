"""Probability machinery: trace estimation, trajectory log-likelihood,
score-from-velocity conversion, and the auxiliary-path measurement likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergedTrajectory, DomainError
from .operators import LinearOperator
from .schedule import InterpolationSchedule, SnrTerms, T_MAX_DEFAULT, T_MIN_DEFAULT, snr_terms
from .tensor import Rng, SpdMatrix, as_tensor
from .velocity import GaussianDataPrior, VelocityField

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TraceEstimator:
    """Exact trace (closed form or one JVP per coordinate) or Hutchinson probes."""

    mode: str = "exact"
    probes: int = 16
    exact_threshold: int = 64

    def __post_init__(self):
        if self.mode not in ("exact", "hutchinson"):
            raise DomainError(f"unknown trace mode {self.mode!r}")


def default_estimator(dim: int, exact_threshold: int = 64, probes: int = 16) -> TraceEstimator:
    """Exact up to the dimension cutoff, Hutchinson above."""
    mode = "exact" if dim <= exact_threshold else "hutchinson"
    return TraceEstimator(mode=mode, probes=probes, exact_threshold=exact_threshold)


def trace_jacobian(
    field: VelocityField,
    x: np.ndarray,
    t: float,
    est: TraceEstimator,
    rng: Rng | None = None,
    probes: np.ndarray | None = None,
) -> float:
    """tr(dv/dx) at (x, t).

    Exact mode uses the field's closed form when it has one, otherwise sums
    e_i^T (dv/dx) e_i over the basis. Hutchinson mode averages eps^T (dv/dx) eps
    over Rademacher probes (pass ``probes`` to reuse a fixed draw, else ``rng``).
    """
    x = as_tensor(x)
    if est.mode == "exact":
        closed = field.exact_trace(x, t)
        if closed is not None:
            return closed
        basis = np.eye(field.dim)
        return float(np.trace(field.jvp_batch(x, t, basis)))
    if probes is None:
        if rng is None:
            raise DomainError("hutchinson mode needs probes or an rng")
        probes = rng.rademacher((est.probes, field.dim))
    jv = field.jvp_batch(x, t, probes)
    return float(np.mean(np.sum(probes * jv, axis=1)))


def standard_normal_logpdf(x: np.ndarray) -> float:
    x = as_tensor(x)
    return float(-0.5 * x @ x - 0.5 * x.shape[0] * LOG_2PI)


def trajectory_log_likelihood(
    field: VelocityField,
    x0: np.ndarray,
    n_steps: int,
    est: TraceEstimator | None = None,
    rng: Rng | None = None,
) -> tuple[np.ndarray, float]:
    """Euler rollout from t=0 to 1 accumulating the trajectory log-density.

    logp = log N(x0; 0, I) - sum_t tr(dv/dx)(x_t, t) dt with left-endpoint
    Riemann sums, matching the discretization the local objectives use.
    """
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    if est is None:
        est = default_estimator(field.dim)
    x = as_tensor(x0).copy()
    dt = 1.0 / n_steps
    logp = standard_normal_logpdf(x)
    for i in range(n_steps):
        t = i * dt
        logp -= trace_jacobian(field, x, t, est, rng) * dt
        x = x + field.eval(x, t) * dt
        if not np.all(np.isfinite(x)):
            raise DivergedTrajectory(i)
    return x, logp


def score_from_velocity_value(
    s: InterpolationSchedule, x: np.ndarray, t: float, v: np.ndarray, terms: SnrTerms | None = None
) -> np.ndarray:
    """Score from an already-evaluated velocity (Tweedie conversion):

        score = (1/beta^2) [ (d log lambda/dt)^{-1} (v - (d log beta/dt) x) - x ]
    """
    if terms is None:
        terms = snr_terms(s, t)
    x = as_tensor(x)
    return ((v - terms.log_beta_rate * x) / terms.log_snr_rate - x) / terms.beta_sq


def score_from_velocity(
    field: VelocityField,
    s: InterpolationSchedule,
    x: np.ndarray,
    t: float,
    t_min: float = T_MIN_DEFAULT,
    t_max: float = T_MAX_DEFAULT,
) -> np.ndarray:
    """Marginal score grad log p(x_t) recovered from the velocity field."""
    terms = snr_terms(s, t, t_min, t_max)
    return score_from_velocity_value(s, x, t, field.eval(as_tensor(x), t), terms)


def score_from_velocity_ot(field: VelocityField, x: np.ndarray, t: float) -> np.ndarray:
    """Straight-path shortcut: score = (1/(1-t)) (-x + t v)."""
    x = as_tensor(x)
    return (-x + t * field.eval(x, t)) / (1.0 - t)


@dataclass
class AuxiliaryPath:
    """Interpolation y_s = alpha_s y + beta_s (A x0) between A x0 and the measurement."""

    y: np.ndarray
    ax0: np.ndarray
    schedule: InterpolationSchedule

    def __post_init__(self):
        self.y = as_tensor(self.y)
        self.ax0 = as_tensor(self.ax0)

    @classmethod
    def from_measurement(
        cls, y: np.ndarray, operator: LinearOperator, x0: np.ndarray, schedule: InterpolationSchedule
    ) -> "AuxiliaryPath":
        return cls(y=y, ax0=operator.apply(x0), schedule=schedule)

    def at(self, s: float) -> np.ndarray:
        return self.schedule.alpha(s) * self.y + self.schedule.beta(s) * self.ax0


def local_data_loglik(
    path: AuxiliaryPath, operator: LinearOperator, x_t: np.ndarray, t: float, sigma_y: float
) -> float:
    """log N(y_t; A x_t, alpha_t^2 sigma_y^2 I).

    On an exactly straight trajectory y_t - A x_t = alpha_t (y - A x1), so the
    residual law has per-coordinate std alpha_t sigma_y. Degenerate at t = 0.
    """
    if t <= 0.0:
        raise DomainError("local data likelihood is degenerate at t = 0 (alpha_t = 0)")
    a = path.schedule.alpha(t)
    var = a * a * sigma_y * sigma_y
    resid = path.at(t) - operator.apply(x_t)
    m = resid.shape[0]
    return float(-(resid @ resid) / (2.0 * var) - 0.5 * m * math.log(2.0 * math.pi * var))


class GaussianMarginal:
    """Time-t marginal N(alpha_t mu, alpha_t^2 Sigma + beta_t^2 I) of the Gaussian path."""

    def __init__(self, prior: GaussianDataPrior, schedule: InterpolationSchedule):
        self.prior = prior
        self.schedule = schedule
        eigvals, eigvecs = np.linalg.eigh(prior.sigma.mat)
        self._eigvals = eigvals
        self._basis = eigvecs

    def _cov_eigs(self, t: float) -> np.ndarray:
        a, b = self.schedule.alpha(t), self.schedule.beta(t)
        return a * a * self._eigvals + b * b

    def mean(self, t: float) -> np.ndarray:
        return self.schedule.alpha(t) * self.prior.mu

    def cov(self, t: float) -> SpdMatrix:
        c = self._cov_eigs(t)
        return SpdMatrix((self._basis * c) @ self._basis.T)

    def logpdf(self, x: np.ndarray, t: float) -> float:
        c = self._cov_eigs(t)
        z = self._basis.T @ (as_tensor(x) - self.mean(t))
        d = z.shape[0]
        return float(-0.5 * np.sum(z * z / c) - 0.5 * np.sum(np.log(c)) - 0.5 * d * LOG_2PI)
