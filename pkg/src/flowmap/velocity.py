"""Velocity fields v(x, t) with full differentiation contracts.

Three fields ship:

* ``LinearVelocity`` -- v = M x + b, for calibration tests.
* ``AnalyticGaussianVelocity`` -- the exact conditional-expectation velocity
  for a Gaussian data distribution N(mu, Sigma) interpolated against standard
  normal noise. Everything (Jacobian, trace, score, marginals, flow map) is
  closed-form via the eigendecomposition of Sigma.
* ``MlpVelocity`` -- a small tanh network with Fourier time features and
  hand-written reverse mode (vjp), forward mode (jvp) and forward-over-reverse
  (gradient of probe quadratic forms in the Jacobian).

Every field satisfies <w, jvp(u)> = <vjp(w), u> to 1e-10, which the tests
check against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TrainingDiverged
from .optim import Adam
from .schedule import InterpolationSchedule
from .tensor import Rng, SpdMatrix, as_tensor

FLWM_MAGIC = b"FLWM"
FLWM_VERSION = 1
TIME_FEATURES = 5


class VelocityField:
    """Interface: eval / jvp / vjp / grad_of_jvp_probe over flat states."""

    dim: int
    #: True when the Jacobian dv/dx does not depend on x (trace gradients vanish).
    state_independent_jacobian: bool = False

    def eval(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, x: np.ndarray, t: float, tangent: np.ndarray) -> np.ndarray:
        """(dv/dx) @ tangent."""
        raise NotImplementedError

    def vjp(self, x: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        """(dv/dx)^T @ cotangent."""
        raise NotImplementedError

    def jvp_batch(self, x: np.ndarray, t: float, tangents: np.ndarray) -> np.ndarray:
        """Row-stacked JVPs for tangents of shape (p, dim)."""
        return np.stack([self.jvp(x, t, u) for u in tangents])

    def grad_of_jvp_probe(self, x: np.ndarray, t: float, probe: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. x of the quadratic form probe^T (dv/dx) probe."""
        return self.grad_of_jvp_probe_batch(x, t, probe[None, :])[0]

    def grad_of_jvp_probe_batch(self, x: np.ndarray, t: float, probes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def exact_trace(self, x: np.ndarray, t: float) -> float | None:
        """Closed-form tr(dv/dx) when available, else None."""
        return None


class LinearVelocity(VelocityField):
    """v(x, t) = M x + b, time-independent. Exact trace = tr(M)."""

    state_independent_jacobian = True

    def __init__(self, mat: np.ndarray, bias: np.ndarray | None = None):
        self.mat = as_tensor(mat)
        self.dim = self.mat.shape[0]
        self.bias = np.zeros(self.dim) if bias is None else as_tensor(bias)

    def eval(self, x, t):
        return self.mat @ x + self.bias

    def jvp(self, x, t, tangent):
        return self.mat @ tangent

    def vjp(self, x, t, cotangent):
        return self.mat.T @ cotangent

    def jvp_batch(self, x, t, tangents):
        return tangents @ self.mat.T

    def grad_of_jvp_probe_batch(self, x, t, probes):
        return np.zeros((probes.shape[0], self.dim))

    def exact_trace(self, x, t):
        return float(np.trace(self.mat))


@dataclass
class GaussianDataPrior:
    """Data distribution N(mu, Sigma) used by the analytic field and oracles."""

    mu: np.ndarray
    sigma: SpdMatrix

    def __post_init__(self):
        self.mu = as_tensor(self.mu)
        if self.mu.shape[0] != self.sigma.dim:
            raise ShapeError("mu length does not match sigma dim")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


class AnalyticGaussianVelocity(VelocityField):
    """Exact velocity E[alpha_dot x1 + beta_dot x0 | x_t] for a Gaussian prior.

    With C_t = alpha^2 Sigma + beta^2 I the field is affine in x:

        v(x, t) = alpha_dot mu + (alpha_dot alpha Sigma + beta_dot beta I) C_t^{-1} (x - alpha mu)

    so the Jacobian is x-independent and symmetric (all factors commute in the
    eigenbasis of Sigma), and probe-quadratic-form gradients vanish.
    """

    state_independent_jacobian = True

    def __init__(self, prior: GaussianDataPrior, schedule: InterpolationSchedule):
        self.prior = prior
        self.schedule = schedule
        self.dim = prior.dim
        eigvals, eigvecs = np.linalg.eigh(prior.sigma.mat)
        self._eigvals = eigvals
        self._basis = eigvecs

    def _coeffs(self, t: float):
        """Per-eigenvalue Jacobian coefficients and C_t eigenvalues at time t."""
        s = self.schedule
        a, b = s.alpha(t), s.beta(t)
        ad, bd = s.alpha_dot(t), s.beta_dot(t)
        c_eigs = a * a * self._eigvals + b * b
        j_eigs = (ad * a * self._eigvals + bd * b) / c_eigs
        return a, ad, c_eigs, j_eigs

    def _apply_diag(self, diag: np.ndarray, vec: np.ndarray) -> np.ndarray:
        return self._basis @ (diag * (self._basis.T @ vec))

    def eval(self, x, t):
        a, ad, _, j_eigs = self._coeffs(t)
        centered = as_tensor(x) - a * self.prior.mu
        return ad * self.prior.mu + self._apply_diag(j_eigs, centered)

    def jvp(self, x, t, tangent):
        _, _, _, j_eigs = self._coeffs(t)
        return self._apply_diag(j_eigs, as_tensor(tangent))

    vjp = jvp  # Jacobian is symmetric.

    def jvp_batch(self, x, t, tangents):
        _, _, _, j_eigs = self._coeffs(t)
        return ((tangents @ self._basis) * j_eigs) @ self._basis.T

    def grad_of_jvp_probe_batch(self, x, t, probes):
        return np.zeros((probes.shape[0], self.dim))

    def exact_trace(self, x, t):
        _, _, _, j_eigs = self._coeffs(t)
        return float(j_eigs.sum())

    def score(self, x: np.ndarray, t: float) -> np.ndarray:
        """Closed-form marginal score -C_t^{-1}(x - alpha_t mu)."""
        a, _, c_eigs, _ = self._coeffs(t)
        centered = as_tensor(x) - a * self.prior.mu
        return -self._apply_diag(1.0 / c_eigs, centered)

    def flow_map(self, x0: np.ndarray, t: float) -> np.ndarray:
        """Exact solution of dx = v dt from x0: x_t = alpha_t mu + C_t^{1/2} x0."""
        a, _, c_eigs, _ = self._coeffs(t)
        return a * self.prior.mu + self._apply_diag(np.sqrt(c_eigs), as_tensor(x0))


def time_features(t) -> np.ndarray:
    """Fourier time embedding (t, sin 2 pi t, cos 2 pi t, sin 4 pi t, cos 4 pi t)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    two_pi = 2.0 * np.pi * t
    return np.stack([t, np.sin(two_pi), np.cos(two_pi), np.sin(2 * two_pi), np.cos(2 * two_pi)], axis=-1)


class MlpTape:
    """Saved forward intermediates supporting vjp w.r.t. inputs and weights."""

    def __init__(self, field: "MlpVelocity", xin, h1, h2):
        self.field = field
        self.xin = xin  # (batch, dim + TIME_FEATURES)
        self.h1 = h1
        self.h2 = h2

    def _backward(self, cotangent: np.ndarray):
        f = self.field
        delta2 = (1.0 - self.h2 * self.h2) * (cotangent @ f.w3)
        delta1 = (1.0 - self.h1 * self.h1) * (delta2 @ f.w2)
        return delta1, delta2

    def vjp_x(self, cotangent: np.ndarray) -> np.ndarray:
        delta1, _ = self._backward(cotangent)
        return delta1 @ self.field.w1[:, : self.field.dim]

    def vjp_params(self, cotangent: np.ndarray) -> list[np.ndarray]:
        """Gradients [w1, b1, w2, b2, w3, b3], summed over the batch."""
        delta1, delta2 = self._backward(cotangent)
        return [
            delta1.T @ self.xin,
            delta1.sum(axis=0),
            delta2.T @ self.h1,
            delta2.sum(axis=0),
            cotangent.T @ self.h2,
            cotangent.sum(axis=0),
        ]


class MlpVelocity(VelocityField):
    """tanh MLP velocity: input (x, time features) -> two hidden layers -> dx/dt."""

    def __init__(self, dim: int, hidden: tuple[int, int] = (128, 128)):
        self.dim = dim
        self.hidden = tuple(hidden)
        in_dim = dim + TIME_FEATURES
        h1, h2 = self.hidden
        self.w1 = np.zeros((h1, in_dim))
        self.b1 = np.zeros(h1)
        self.w2 = np.zeros((h2, h1))
        self.b2 = np.zeros(h2)
        self.w3 = np.zeros((dim, h2))
        self.b3 = np.zeros(dim)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def init_weights(self, rng: Rng, zero_final: bool = True) -> "MlpVelocity":
        """Scaled-uniform (Glorot) init; final layer zeroed so v starts at 0."""
        for w in (self.w1, self.w2, self.w3):
            fan_out, fan_in = w.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(w.shape, -bound, bound)
        for b in (self.b1, self.b2, self.b3):
            b[...] = 0.0
        if zero_final:
            self.w3[...] = 0.0
        return self

    def _forward(self, x2d: np.ndarray, t1d: np.ndarray):
        xin = np.concatenate([x2d, time_features(t1d)], axis=1)
        h1 = np.tanh(xin @ self.w1.T + self.b1)
        h2 = np.tanh(h1 @ self.w2.T + self.b2)
        v = h2 @ self.w3.T + self.b3
        return v, MlpTape(self, xin, h1, h2)

    def forward_with_tape(self, x: np.ndarray, t) -> tuple[np.ndarray, MlpTape]:
        """Batched forward pass; x is (batch, dim), t scalar or (batch,)."""
        x2d = as_tensor(x)
        if x2d.ndim == 1:
            x2d = x2d[None, :]
        t1d = np.asarray(t, dtype=np.float64)
        if t1d.ndim == 0:
            t1d = np.full(x2d.shape[0], float(t1d))
        return self._forward(x2d, t1d)

    def eval(self, x, t):
        v, _ = self.forward_with_tape(x, t)
        return v[0] if np.asarray(x).ndim == 1 else v

    def jvp(self, x, t, tangent):
        return self.jvp_batch(x, t, as_tensor(tangent)[None, :])[0]

    def jvp_batch(self, x, t, tangents):
        _, tape = self.forward_with_tape(x, t)
        g1 = 1.0 - tape.h1[0] ** 2
        g2 = 1.0 - tape.h2[0] ** 2
        dh1 = g1[None, :] * (tangents @ self.w1[:, : self.dim].T)
        dh2 = g2[None, :] * (dh1 @ self.w2.T)
        return dh2 @ self.w3.T

    def vjp(self, x, t, cotangent):
        _, tape = self.forward_with_tape(x, t)
        return tape.vjp_x(as_tensor(cotangent)[None, :])[0]

    def grad_of_jvp_probe_batch(self, x, t, probes):
        """Forward-over-reverse gradient of s(x) = probe^T (dv/dx) probe, per probe row.

        Both tanh layers contribute: through the derivative gates g = 1 - h^2
        directly (dg/da = -2 h g) and through the first layer's activations
        feeding the second layer's preactivation.
        """
        _, tape = self.forward_with_tape(x, t)
        h1, h2 = tape.h1[0], tape.h2[0]
        g1 = 1.0 - h1 * h1
        g2 = 1.0 - h2 * h2
        w1x = self.w1[:, : self.dim]

        k1 = probes @ w1x.T               # (p, h1) tangents into layer 1
        p1 = g1[None, :] * k1
        q = p1 @ self.w2.T                # (p, h2) tangents into layer 2
        c = probes @ self.w3              # (p, h2) cotangents from the probe

        gate1 = (-2.0 * h1 * g1)[None, :] * k1 * ((c * g2[None, :]) @ self.w2)
        gate2 = g1[None, :] * (((-2.0 * h2 * g2)[None, :] * c * q) @ self.w2)
        return (gate1 + gate2) @ w1x


def mlp_forward_with_tape(field: MlpVelocity, x: np.ndarray, t) -> tuple[np.ndarray, MlpTape]:
    """Functional alias for the taped forward pass."""
    return field.forward_with_tape(x, t)


def analytic_gaussian_velocity(
    prior: GaussianDataPrior, schedule: InterpolationSchedule
) -> AnalyticGaussianVelocity:
    return AnalyticGaussianVelocity(prior, schedule)


def grad_of_trace_probe(field: VelocityField, x: np.ndarray, t: float, probe: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. x of probe^T (dv/dx) probe (functional form)."""
    return field.grad_of_jvp_probe(as_tensor(x), t, as_tensor(probe))


def train_flow_matching(
    field: MlpVelocity,
    data_sampler,
    schedule: InterpolationSchedule,
    steps: int,
    batch: int,
    lr: float,
    rng: Rng,
) -> tuple[MlpVelocity, np.ndarray]:
    """Regress the field onto path velocities alpha_dot x1 + beta_dot x0.

    ``data_sampler(rng, n)`` yields an (n, dim) batch of data samples. The
    per-step loss (mean squared residual per coordinate) is recorded; a
    non-finite loss aborts with TrainingDiverged naming the step.
    """
    opt = Adam(lr=lr)
    draws = rng.fork("training")
    losses = np.empty(steps)
    d = field.dim
    for step in range(steps):
        x1 = as_tensor(data_sampler(draws, batch))
        x0 = draws.normal((batch, d))
        t = draws.uniform(batch)
        a = np.array([schedule.alpha(ti) for ti in t])
        b = np.array([schedule.beta(ti) for ti in t])
        ad = np.array([schedule.alpha_dot(ti) for ti in t])
        bd = np.array([schedule.beta_dot(ti) for ti in t])
        x_t = a[:, None] * x1 + b[:, None] * x0
        target = ad[:, None] * x1 + bd[:, None] * x0

        v, tape = field.forward_with_tape(x_t, t)
        resid = v - target
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise TrainingDiverged(step)
        losses[step] = loss
        grads = tape.vjp_params(2.0 * resid / resid.size)
        opt.step(field.params, grads)
    return field, losses


def save_checkpoint(field: MlpVelocity, path) -> None:
    """FLWM format: magic, version byte, u32 layer count, per layer
    (u32 rows, u32 cols), f64 weights then f64 biases; all little-endian."""
    layers = [(field.w1, field.b1), (field.w2, field.b2), (field.w3, field.b3)]
    with open(path, "wb") as f:
        f.write(FLWM_MAGIC)
        f.write(struct.pack("<B", FLWM_VERSION))
        f.write(struct.pack("<I", len(layers)))
        for w, b in layers:
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
            f.write(w.astype("<f8").tobytes())
            f.write(b.astype("<f8").tobytes())


def load_checkpoint(path) -> MlpVelocity:
    with open(path, "rb") as f:
        if f.read(4) != FLWM_MAGIC:
            raise ShapeError(f"{path}: bad checkpoint magic")
        (version,) = struct.unpack("<B", f.read(1))
        if version != FLWM_VERSION:
            raise ShapeError(f"{path}: unsupported checkpoint version {version}")
        (n_layers,) = struct.unpack("<I", f.read(4))
        layers = []
        for _ in range(n_layers):
            rows, cols = struct.unpack("<II", f.read(8))
            w = np.frombuffer(f.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            b = np.frombuffer(f.read(8 * rows), dtype="<f8")
            layers.append((w.astype(np.float64), b.astype(np.float64)))
    if len(layers) != 3:
        raise ShapeError(f"{path}: expected 3 layers, got {len(layers)}")
    dim = layers[2][0].shape[0]
    hidden = (layers[0][0].shape[0], layers[1][0].shape[0])
    field = MlpVelocity(dim, hidden)
    if layers[0][0].shape[1] != dim + TIME_FEATURES:
        raise ShapeError(f"{path}: layer shapes inconsistent with dim {dim}")
    field.w1[...], field.b1[...] = layers[0]
    field.w2[...], field.b2[...] = layers[1]
    field.w3[...], field.b3[...] = layers[2]
    return field
