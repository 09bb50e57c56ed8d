#!/usr/bin/env python3
"""Compressed sensing at varying measurement rates.

The operator composes a random sign diagonal, a real orthonormal Fourier-type
transform, and random row subsampling at rate m/n. Reconstruction quality
should degrade monotonically as the rate shrinks.
"""

import numpy as np

from flowmap import MlpVelocity, Rng, train_flow_matching
from flowmap.datasets import blob_sampler, smooth_blob_image
from flowmap.metrics import metric_report
from flowmap.operators import DftSubsampled, MeasurementModel, measure
from flowmap.schedule import ot_schedule
from flowmap.solvers import default_solver_config, solve_ictm

H = W = 16
n = H * W
sigma_y = 0.01
schedule = ot_schedule()

print("== training the image prior ==")
rng = Rng(314)
field = MlpVelocity(n, hidden=(128, 128)).init_weights(rng.fork("init"))
field, _ = train_flow_matching(
    field, blob_sampler(H, W, 3), schedule, steps=3000, batch=64, lr=1e-3,
    rng=rng.fork("train"),
)

n_images = 10
print(f"\n== mean scores over {n_images} images ==")
print(" rate   m      PSNR      SSIM")
for rate in (0.5, 0.25, 0.1):
    operator = DftSubsampled(n, rate, seed=5, sign_seed=6)
    model = MeasurementModel(operator, sigma_y)
    psnrs, ssims = [], []
    for j in range(n_images):
        r = Rng(9000 + j)
        img = smooth_blob_image(H, W, 3, r.fork("img"))
        y = measure(model, img.ravel(), r.fork("meas"))
        cfg = default_solver_config("compressed_sensing", sigma_y)
        result = solve_ictm(cfg, field, schedule, operator, y, r.fork("solve"))
        rep = metric_report(result.x1.reshape(H, W), img)
        psnrs.append(rep.psnr)
        ssims.append(rep.ssim)
    print(f" {rate:4.2f} {operator.out_dim:4d}   {np.mean(psnrs):6.2f}    {np.mean(ssims):.3f}")
