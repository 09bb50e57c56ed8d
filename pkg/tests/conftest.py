"""Shared fixtures (expensive trained fields are session-scoped) and the
acceptance-criterion reporter that prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import numpy as np
import pytest

from flowmap.datasets import blob_sampler, gaussian_prior_sampler
from flowmap.schedule import ot_schedule
from flowmap.tensor import Rng, SpdMatrix, random_spd
from flowmap.velocity import (
    AnalyticGaussianVelocity,
    GaussianDataPrior,
    MlpVelocity,
    train_flow_matching,
)

_CRITERIA: list[tuple[int, str, bool, float]] = []


def record_criterion(number: int, description: str, passed: bool, seconds: float):
    _CRITERIA.append((number, description, passed, seconds))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, seconds in sorted(_CRITERIA):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:2d} [{status}] {description} ({seconds:.1f}s)"
        )


@pytest.fixture(scope="session")
def schedule():
    return ot_schedule()


@pytest.fixture(scope="session")
def toy16(schedule):
    """d=16 Gaussian toy: prior, analytic field."""
    rng = Rng(2024)
    mu = 0.5 * rng.normal(16)
    sigma = SpdMatrix(random_spd(16, rng.fork("spd"), 0.3, 1.5))
    prior = GaussianDataPrior(mu, sigma)
    return prior, AnalyticGaussianVelocity(prior, schedule)


@pytest.fixture(scope="session")
def gaussian2d(schedule):
    rng = Rng(11)
    mu = np.array([1.2, -0.7])
    sigma = SpdMatrix(random_spd(2, rng.fork("spd"), 0.4, 1.2))
    prior = GaussianDataPrior(mu, sigma)
    return prior, AnalyticGaussianVelocity(prior, schedule)


@pytest.fixture(scope="session")
def trained_2d(schedule, gaussian2d):
    """Two-stage trained 2-D MLP flow on the Gaussian prior (used by the
    velocity-match and compliance criteria)."""
    prior, _ = gaussian2d
    rng = Rng(11)
    field = MlpVelocity(2, hidden=(128, 128)).init_weights(rng.fork("two-stage"))
    field, losses1 = train_flow_matching(
        field, gaussian_prior_sampler(prior), schedule, steps=8000, batch=256, lr=1e-3,
        rng=rng.fork("s1"),
    )
    field, losses2 = train_flow_matching(
        field, gaussian_prior_sampler(prior), schedule, steps=4000, batch=256, lr=2e-4,
        rng=rng.fork("s2"),
    )
    return field, np.concatenate([losses1, losses2])


@pytest.fixture(scope="session")
def trained_blobs(schedule):
    """16x16 smooth-blob image prior (d=256) for inpainting/compressed sensing."""
    rng = Rng(314)
    field = MlpVelocity(256, hidden=(128, 128)).init_weights(rng.fork("init"))
    field, losses = train_flow_matching(
        field, blob_sampler(16, 16, 3), schedule, steps=3000, batch=64, lr=1e-3,
        rng=rng.fork("train"),
    )
    return field, losses
