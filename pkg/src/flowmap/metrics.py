"""Reconstruction quality metrics: PSNR and single-scale SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d

from .errors import ShapeError
from .tensor import as_tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    mse: float


def mse(x: np.ndarray, ref: np.ndarray) -> float:
    x, ref = as_tensor(x), as_tensor(ref)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {ref.shape}")
    return float(np.mean((x - ref) ** 2))


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / mse); +inf sentinel when mse = 0.

    Computed as a difference of logs so that exactly representable ratios
    (e.g. mse = 1/100 at peak 1) give exact decibel values.
    """
    err = mse(x, ref)
    if err == 0.0:
        return math.inf
    return 10.0 * (math.log10(peak * peak) - math.log10(err))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    grid = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (grid / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM over valid (unpadded) 11x11 Gaussian windows, sigma = 1.5."""
    x, ref = as_tensor(x), as_tensor(ref)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {ref.shape}")
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs a 2-D image at least {SSIM_WINDOW} per side, got {x.shape}")

    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = correlate2d(x, w, mode="valid")
    mu_y = correlate2d(ref, w, mode="valid")
    xx = correlate2d(x * x, w, mode="valid")
    yy = correlate2d(ref * ref, w, mode="valid")
    xy = correlate2d(x * ref, w, mode="valid")
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(ssim_map.mean())


def metric_report(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> MetricReport:
    """PSNR/SSIM/MSE bundle; SSIM is NaN for inputs that are not 2-D images."""
    x, ref = as_tensor(x), as_tensor(ref)
    err = mse(x, ref)
    p = psnr(x, ref, peak)
    if x.ndim == 2 and min(x.shape) >= SSIM_WINDOW:
        s = ssim(x, ref, peak)
    else:
        s = math.nan
    return MetricReport(psnr=p, ssim=s, mse=err)
