"""Linear forward operators with exact adjoints, plus the Gaussian measurement model.

Operators consume and produce flat 1-D float64 vectors (row-major flattening
of any underlying image); ``in_shape``/``out_shape`` record the logical
shapes. Every shipped operator passes ``<A x, u> == <x, A^T u>`` to 1e-10
relative, which the test suite checks with random pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError, ShapeError
from .tensor import Rng, as_tensor


class LinearOperator:
    """Base: linear map with exact adjoint over flat vectors."""

    kind: str = "abstract"
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_shape))

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_in(self, x) -> np.ndarray:
        x = as_tensor(x).ravel()
        if x.shape[0] != self.in_dim:
            raise ShapeError(f"{self.kind}: input length {x.shape[0]} != {self.in_dim}")
        return x

    def _check_out(self, g) -> np.ndarray:
        g = as_tensor(g).ravel()
        if g.shape[0] != self.out_dim:
            raise ShapeError(f"{self.kind}: cotangent length {g.shape[0]} != {self.out_dim}")
        return g

    def as_matrix(self) -> np.ndarray:
        """Dense m x n matrix (columns = images of basis vectors)."""
        n = self.in_dim
        cols = [self.apply(np.eye(n)[:, j]) for j in range(n)]
        return np.stack(cols, axis=1)


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, shape):
        self.in_shape = tuple(shape)
        self.out_shape = tuple(shape)

    def apply(self, x):
        return self._check_in(x).copy()

    def adjoint(self, g):
        return self._check_out(g).copy()


class MaskKeep(LinearOperator):
    """Keep a fixed index subset; adjoint zero-fills the dropped entries."""

    def __init__(self, shape, keep_idx: np.ndarray, kind: str):
        self.in_shape = tuple(shape)
        self.keep_idx = np.asarray(keep_idx, dtype=np.int64)
        self.out_shape = (self.keep_idx.shape[0],)
        self.kind = kind

    def apply(self, x):
        return self._check_in(x)[self.keep_idx]

    def adjoint(self, g):
        g = self._check_out(g)
        out = np.zeros(self.in_dim)
        out[self.keep_idx] = g
        return out


def mask_random(shape, fraction: float, seed: int) -> MaskKeep:
    """Random mask dropping round(fraction * n) entries (fraction = missing share)."""
    n = int(np.prod(shape))
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"mask fraction must be in [0, 1), got {fraction}")
    keep_count = int(round((1.0 - fraction) * n))
    perm = Rng(seed).permutation(n)
    keep_idx = np.sort(perm[:keep_count])
    return MaskKeep(shape, keep_idx, "mask_random")


def mask_box(height: int, width: int, top: int, left: int, box_h: int, box_w: int) -> MaskKeep:
    """Drop a rectangular box; observed entries are everything outside it."""
    if top < 0 or left < 0 or top + box_h > height or left + box_w > width:
        raise ShapeError(f"box ({top},{left},{box_h},{box_w}) exceeds image {height}x{width}")
    keep = np.ones((height, width), dtype=bool)
    keep[top : top + box_h, left : left + box_w] = False
    return MaskKeep((height, width), np.flatnonzero(keep.ravel()), "mask_box")


def mask_box_centered(height: int, width: int) -> MaskKeep:
    """Centered box with half the side length in each dimension."""
    bh, bw = height // 2, width // 2
    return mask_box(height, width, (height - bh) // 2, (width - bw) // 2, bh, bw)


class DownsampleAvg(LinearOperator):
    """Average pooling by an integer factor; adjoint spreads each coarse value / factor^2."""

    kind = "downsample_avg"

    def __init__(self, height: int, width: int, factor: int):
        if height % factor or width % factor:
            raise ShapeError(f"factor {factor} does not divide image {height}x{width}")
        self.in_shape = (height, width)
        self.out_shape = (height // factor, width // factor)
        self.factor = factor

    def apply(self, x):
        h, w = self.in_shape
        f = self.factor
        img = self._check_in(x).reshape(h, w)
        return img.reshape(h // f, f, w // f, f).mean(axis=(1, 3)).ravel()

    def adjoint(self, g):
        f = self.factor
        coarse = self._check_out(g).reshape(self.out_shape)
        return (np.repeat(np.repeat(coarse, f, axis=0), f, axis=1) / (f * f)).ravel()


class BlurGaussian(LinearOperator):
    """Gaussian blur with reflective (edge-inclusive) padding.

    The kernel is an odd square sum-one Gaussian; because the kernel is
    centrosymmetric and the padding reflects about the edge, the operator is
    self-adjoint, so the adjoint is the same correlation.
    """

    kind = "blur_gaussian"

    def __init__(self, height: int, width: int, kernel_size: int, sigma: float):
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ShapeError(f"kernel size must be odd and positive, got {kernel_size}")
        if kernel_size > 2 * min(height, width):
            raise ShapeError(f"kernel {kernel_size} too large for image {height}x{width}")
        self.in_shape = (height, width)
        self.out_shape = (height, width)
        self.kernel_size = kernel_size
        self.sigma = float(sigma)
        half = kernel_size // 2
        grid = np.arange(-half, half + 1, dtype=np.float64)
        g1 = np.exp(-0.5 * (grid / sigma) ** 2)
        kernel = np.outer(g1, g1)
        self.kernel = kernel / kernel.sum()

    def _blur(self, x):
        img = self._check_in(x).reshape(self.in_shape)
        half = self.kernel_size // 2
        padded = np.pad(img, half, mode="symmetric")
        return convolve2d(padded, self.kernel, mode="valid").ravel()

    def apply(self, x):
        return self._blur(x)

    def adjoint(self, g):
        return self._blur(g)


def _dht(x: np.ndarray) -> np.ndarray:
    """Normalized discrete Hartley transform: orthonormal, symmetric, involutory."""
    spectrum = np.fft.fft(x)
    return (spectrum.real - spectrum.imag) / np.sqrt(x.shape[-1])


class DftSubsampled(LinearOperator):
    """Random +-1 sign diagonal, real orthonormal Fourier-type transform, row subsampling.

    The transform pairs the real and imaginary DFT components per frequency
    (cas kernel cos + sin, normalized by 1/sqrt(n)), giving a real orthogonal
    symmetric matrix; subsampled rows are exactly orthonormal. Applied as a
    dense matrix up to n = 4096 and through the fast transform above that.
    """

    kind = "dft_subsampled"
    DIRECT_LIMIT = 4096

    def __init__(self, n: int, rate: float, seed: int, sign_seed: int):
        if not 0.0 < rate <= 1.0:
            raise ConfigError(f"rate must be in (0, 1], got {rate}")
        self.in_shape = (n,)
        m = int(round(rate * n))
        if m < 1:
            raise ConfigError(f"rate {rate} keeps no rows of n={n}")
        self.out_shape = (m,)
        self.rows = np.sort(Rng(seed).permutation(n)[:m])
        self.signs = Rng(sign_seed).rademacher(n)
        if n <= self.DIRECT_LIMIT:
            j = np.arange(n)
            phases = 2.0 * np.pi * np.outer(self.rows, j) / n
            rows_mat = (np.cos(phases) + np.sin(phases)) / np.sqrt(n)
            self._mat = rows_mat * self.signs[None, :]
        else:
            self._mat = None

    def apply(self, x):
        x = self._check_in(x)
        if self._mat is not None:
            return self._mat @ x
        return _dht(self.signs * x)[self.rows]

    def adjoint(self, g):
        g = self._check_out(g)
        if self._mat is not None:
            return self._mat.T @ g
        full = np.zeros(self.in_dim)
        full[self.rows] = g
        return self.signs * _dht(full)


def make_operator(kind: str, **params) -> LinearOperator:
    """Factory over the shipped operator kinds; unknown kinds raise ConfigError."""
    try:
        if kind == "identity":
            return Identity(params["shape"])
        if kind == "mask_random":
            return mask_random(params["shape"], params["fraction"], params["seed"])
        if kind == "mask_box":
            if {"top", "left", "box_h", "box_w"} <= params.keys():
                return mask_box(
                    params["height"], params["width"],
                    params["top"], params["left"], params["box_h"], params["box_w"],
                )
            return mask_box_centered(params["height"], params["width"])
        if kind == "downsample_avg":
            return DownsampleAvg(params["height"], params["width"], params["factor"])
        if kind == "blur_gaussian":
            return BlurGaussian(
                params["height"], params["width"], params["kernel_size"], params["sigma"]
            )
        if kind == "dft_subsampled":
            return DftSubsampled(
                params["n"], params["rate"], params["seed"], params["sign_seed"]
            )
    except KeyError as e:
        raise ConfigError(f"operator {kind!r} missing parameter {e.args[0]!r}") from None
    raise ConfigError(f"unknown operator kind {kind!r}")


@dataclass
class MeasurementModel:
    """Forward operator plus i.i.d. Gaussian noise level (sigma_y = 0 is noiseless)."""

    operator: LinearOperator
    sigma_y: float

    def __post_init__(self):
        if self.sigma_y < 0:
            raise ConfigError(f"sigma_y must be >= 0, got {self.sigma_y}")


def measure(m: MeasurementModel, x_true: np.ndarray, rng: Rng) -> np.ndarray:
    """y = A x_true + sigma_y * z with z standard normal."""
    y = m.operator.apply(x_true)
    if m.sigma_y > 0:
        y = y + m.sigma_y * rng.normal(y.shape[0])
    return y
