"""Synthetic ground-truth datasets: Gaussian vectors and small test images."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import Rng, as_tensor, gaussian_sample
from .velocity import GaussianDataPrior


def gaussian_vectors(mu: np.ndarray, cov_chol: np.ndarray, count: int, rng: Rng) -> list[np.ndarray]:
    return [gaussian_sample(rng, mu, cov_chol) for _ in range(count)]


def smooth_blob_image(height: int, width: int, n_blobs: int, rng: Rng) -> np.ndarray:
    """Sum of random Gaussian bumps, min-max normalized into [0, 1]."""
    if n_blobs < 1:
        raise ConfigError(f"n_blobs must be >= 1, got {n_blobs}")
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    img = np.zeros((height, width))
    scale = min(height, width)
    for _ in range(n_blobs):
        cy = rng.uniform(low=0.0, high=height - 1.0)
        cx = rng.uniform(low=0.0, high=width - 1.0)
        width_px = rng.uniform(low=0.12, high=0.3) * scale
        amp = rng.uniform(low=0.4, high=1.0)
        img += amp * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * width_px**2))
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.zeros((height, width))
    return (img - lo) / (hi - lo)


def checkerboard_image(height: int, width: int, cell: int) -> np.ndarray:
    if cell < 1 or height % cell or width % cell:
        raise ConfigError(f"cell {cell} must divide image {height}x{width}")
    rows = np.arange(height)[:, None] // cell
    cols = np.arange(width)[None, :] // cell
    return ((rows + cols) % 2).astype(np.float64)


def synthesize_dataset(kind: str, params: dict, rng: Rng) -> list[np.ndarray]:
    """Deterministic dataset synthesis; image kinds produce values in [0, 1]."""
    count = int(params.get("count", 1))
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    if kind == "gaussian":
        try:
            mu = as_tensor(params["mu"])
            cov_chol = as_tensor(params["cov_chol"])
        except KeyError as e:
            raise ConfigError(f"gaussian dataset missing parameter {e.args[0]!r}") from None
        return gaussian_vectors(mu, cov_chol, count, rng)
    if kind == "smooth_blobs":
        h, w = int(params["height"]), int(params["width"])
        n_blobs = int(params.get("n_blobs", 3))
        return [smooth_blob_image(h, w, n_blobs, rng) for _ in range(count)]
    if kind == "checkerboard":
        h, w = int(params["height"]), int(params["width"])
        cell = int(params.get("cell", max(1, h // 4)))
        return [checkerboard_image(h, w, cell) for _ in range(count)]
    raise ConfigError(f"unknown dataset kind {kind!r}")


def blob_sampler(height: int, width: int, n_blobs: int = 3):
    """Training sampler: flattened smooth-blob images in [0, 1]."""

    def sample(rng: Rng, n: int) -> np.ndarray:
        return np.stack([smooth_blob_image(height, width, n_blobs, rng).ravel() for _ in range(n)])

    return sample


def gaussian_prior_sampler(prior: GaussianDataPrior):
    """Training sampler drawing from N(mu, Sigma)."""
    chol = prior.sigma.chol

    def sample(rng: Rng, n: int) -> np.ndarray:
        z = rng.normal((n, prior.dim))
        return prior.mu[None, :] + z @ chol.T

    return sample
