"""Deterministic dense float64 substrate: seeded RNG, SPD solves, tensor file I/O.

All arrays are 64-bit, row-major, and serialized little-endian so that
artifacts are bit-identical across platforms and reruns.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite, ShapeError

FTEN_MAGIC = b"FTEN"
FTEN_VERSION = 1


class Rng:
    """Counter-based random stream (numpy Philox) with labeled substreams.

    Identical seeds produce identical streams on every platform. Gaussian
    draws use numpy's ziggurat transform (the fixed choice for this package).
    ``fork(label)`` derives an independent child stream from the SHA-256 of
    the label, so adding a consumer never perturbs existing streams.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._spawn_key = _spawn_key
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_spawn_key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def fork(self, label: str) -> "Rng":
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        words = tuple(int.from_bytes(digest[4 * i : 4 * i + 4], "little") for i in range(4))
        return Rng(self.seed, self._spawn_key + words)

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def rademacher(self, shape) -> np.ndarray:
        return 2.0 * self._gen.integers(0, 2, size=shape).astype(np.float64) - 1.0

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float64 array."""
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def cholesky_factor(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = a; raises NotPositiveDefinite naming the pivot."""
    a = as_tensor(a)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefinite(j)
        lower[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


@dataclass
class SpdMatrix:
    """Symmetric positive-definite matrix with a cached Cholesky factor."""

    mat: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mat = as_tensor(self.mat)
        n = self.mat.shape[0]
        if self.mat.ndim != 2 or self.mat.shape[1] != n:
            raise ShapeError(f"expected a square matrix, got shape {self.mat.shape}")
        scale = max(1.0, float(np.abs(self.mat).max()))
        if np.abs(self.mat - self.mat.T).max() > 1e-12 * scale:
            raise ShapeError("matrix is not symmetric to 1e-12 relative")
        self.chol = cholesky_factor(self.mat)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]


def cholesky_solve(a: SpdMatrix | np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for SPD a via forward/back substitution on the factor."""
    spd = a if isinstance(a, SpdMatrix) else SpdMatrix(a)
    b = as_tensor(b)
    if b.shape[0] != spd.dim:
        raise ShapeError(f"rhs length {b.shape[0]} does not match dim {spd.dim}")
    z = solve_triangular(spd.chol, b, lower=True)
    return solve_triangular(spd.chol.T, z, lower=False)


def gaussian_sample(rng: Rng, mean: np.ndarray, cov_chol: np.ndarray) -> np.ndarray:
    """Draw mean + L z with z i.i.d. standard normal from rng."""
    mean = as_tensor(mean)
    cov_chol = as_tensor(cov_chol)
    if cov_chol.shape != (mean.shape[0], mean.shape[0]):
        raise ShapeError(
            f"factor shape {cov_chol.shape} does not match mean length {mean.shape[0]}"
        )
    z = rng.normal(mean.shape[0])
    return mean + cov_chol @ z


def random_spd(dim: int, rng: Rng, eig_low: float = 0.25, eig_high: float = 2.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues uniform in [eig_low, eig_high]."""
    g = rng.normal((dim, dim))
    q, _ = np.linalg.qr(g)
    eigs = rng.uniform(dim, eig_low, eig_high)
    return (q * eigs) @ q.T


def save_tensor(x: np.ndarray, path) -> None:
    """Write the FTEN format: magic, version byte, u32 rank, u64 dims, f64 payload.

    All integers and floats are little-endian; the payload is row-major.
    """
    x = as_tensor(x)
    with open(path, "wb") as f:
        f.write(FTEN_MAGIC)
        f.write(struct.pack("<B", FTEN_VERSION))
        f.write(struct.pack("<I", x.ndim))
        for d in x.shape:
            f.write(struct.pack("<Q", d))
        f.write(x.astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FTEN_MAGIC:
            raise ShapeError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<B", f.read(1))
        if version != FTEN_VERSION:
            raise ShapeError(f"{path}: unsupported version {version}")
        (rank,) = struct.unpack("<I", f.read(4))
        dims = [struct.unpack("<Q", f.read(8))[0] for _ in range(rank)]
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(f.read(8 * count), dtype="<f8", count=count)
    return data.reshape(dims).astype(np.float64)
