#!/usr/bin/env python3
"""Train a small flow-matching prior and compare it with the exact field.

For a Gaussian data distribution the conditional-expectation velocity has a
closed form, so we can measure how well the trained network approximates it,
and check the score recovered from the velocity against the analytic score.
"""

import numpy as np

from flowmap import (
    GaussianDataPrior,
    GaussianMarginal,
    MlpVelocity,
    Rng,
    SpdMatrix,
    score_from_velocity,
    train_flow_matching,
)
from flowmap.datasets import gaussian_prior_sampler
from flowmap.schedule import ot_schedule
from flowmap.tensor import random_spd
from flowmap.velocity import AnalyticGaussianVelocity

rng = Rng(11)
schedule = ot_schedule()
prior = GaussianDataPrior(
    np.array([1.2, -0.7]), SpdMatrix(random_spd(2, rng.fork("spd"), 0.4, 1.2))
)
analytic = AnalyticGaussianVelocity(prior, schedule)

print("== training a 2-D flow prior (two stages) ==")
field = MlpVelocity(2, hidden=(128, 128)).init_weights(rng.fork("init"))
field, losses1 = train_flow_matching(
    field, gaussian_prior_sampler(prior), schedule, steps=8000, batch=256, lr=1e-3,
    rng=rng.fork("stage1"),
)
field, losses2 = train_flow_matching(
    field, gaussian_prior_sampler(prior), schedule, steps=4000, batch=256, lr=2e-4,
    rng=rng.fork("stage2"),
)
print(f"loss: {losses1[:50].mean():.4f} -> {losses2[-50:].mean():.4f} "
      "(the floor is the conditional variance of the path velocity)")

print("\n== velocity match along the path ==")
marginal = GaussianMarginal(prior, schedule)
check = Rng(77)
print(" t    rel. error")
for t in np.linspace(0.1, 0.9, 9):
    xs = marginal.mean(t)[None, :] + check.normal((512, 2)) @ marginal.cov(t).chol.T
    v_true = np.stack([analytic.eval(x, t) for x in xs])
    v_mlp = field.eval(xs, t)
    rel = np.mean(np.linalg.norm(v_mlp - v_true, axis=1)) / np.mean(
        np.linalg.norm(v_true, axis=1)
    )
    print(f"{t:.2f}   {rel:6.2%}")

print("\n== score recovered from the trained velocity ==")
for t in (0.25, 0.5, 0.75):
    x = marginal.mean(t) + marginal.cov(t).chol @ Rng(5).normal(2)
    s_mlp = score_from_velocity(field, schedule, x, t)
    s_true = analytic.score(x, t)
    print(f"t={t:.2f}  recovered={np.round(s_mlp, 3)}  analytic={np.round(s_true, 3)}")
