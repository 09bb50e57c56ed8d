"""Interpolation schedules (alpha_t, beta_t) and signal-to-noise quantities.

A schedule defines the probability path x_t = alpha_t x1 + beta_t x0 with
alpha(0) = 0, beta(0) = 1, alpha(1) = 1, beta(1) = 0. The signal-to-noise
ratio is lambda_t = alpha_t / beta_t; its log-derivative feeds the
score-from-velocity conversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .errors import DomainError

T_MIN_DEFAULT = 1e-3
T_MAX_DEFAULT = 1.0 - 1e-3


@dataclass(frozen=True)
class InterpolationSchedule:
    name: str
    alpha: Callable[[float], float]
    beta: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    beta_dot: Callable[[float], float]


@dataclass(frozen=True)
class SnrTerms:
    """d log(lambda_t)/dt, d log(beta_t)/dt and beta_t^2 at one time."""

    log_snr_rate: float
    log_beta_rate: float
    beta_sq: float


def ot_schedule() -> InterpolationSchedule:
    """Straight (optimal-transport) path: alpha_t = t, beta_t = 1 - t."""
    return InterpolationSchedule(
        name="ot",
        alpha=lambda t: float(t),
        beta=lambda t: 1.0 - float(t),
        alpha_dot=lambda t: 1.0,
        beta_dot=lambda t: -1.0,
    )


def snr_terms(
    s: InterpolationSchedule,
    t: float,
    t_min: float = T_MIN_DEFAULT,
    t_max: float = T_MAX_DEFAULT,
) -> SnrTerms:
    """Evaluate the SNR rate terms from the schedule's closed forms.

    lambda_t = alpha/beta is singular at t in {0, 1}, so queries are
    restricted to the clamped domain [t_min, t_max].
    """
    if not t_min <= t <= t_max:
        raise DomainError(f"t={t} outside clamped domain [{t_min}, {t_max}]")
    a, b = s.alpha(t), s.beta(t)
    ad, bd = s.alpha_dot(t), s.beta_dot(t)
    return SnrTerms(
        log_snr_rate=ad / a - bd / b,
        log_beta_rate=bd / b,
        beta_sq=b * b,
    )
