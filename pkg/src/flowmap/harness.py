"""Experiment orchestration: build problems from a config, run the pipeline
(synthesize -> measure -> solve -> score), and persist reproducible artifacts.

Outputs per run directory: per-image FTEN tensors (ground truth, measurement,
reconstruction), per-image ``steps_NNN.csv`` solver diagnostics, a
``metrics.csv`` table, and ``manifest.txt`` carrying the canonical config
echo, a content hash of the inputs, per-image rows and aggregates.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .analysis import gaussian_map_oracle
from .config import ExperimentConfig, parse_config
from .datasets import (
    blob_sampler,
    checkerboard_image,
    gaussian_prior_sampler,
    smooth_blob_image,
)
from .errors import ConfigError, FlowmapError, ShapeError
from .metrics import metric_report
from .operators import (
    BlurGaussian,
    DftSubsampled,
    DownsampleAvg,
    Identity,
    LinearOperator,
    MeasurementModel,
    mask_box_centered,
    mask_random,
    measure,
)
from .schedule import InterpolationSchedule, ot_schedule
from .solvers import ReconstructionResult, SolverConfig, solve
from .tensor import Rng, SpdMatrix, as_tensor, random_spd, save_tensor
from .velocity import (
    AnalyticGaussianVelocity,
    GaussianDataPrior,
    MlpVelocity,
    load_checkpoint,
    save_checkpoint,
    train_flow_matching,
)

METRICS_HEADER = "image_index,psnr,ssim,mse,wall_time_s"
STEPS_HEADER = "t,objective,residual,trace"


def build_schedule(cfg: ExperimentConfig) -> InterpolationSchedule:
    name = cfg.get_str("schedule", "ot")
    if name != "ot":
        raise ConfigError(f"unknown schedule {name!r}")
    return ot_schedule()


def synthesize_gaussian_prior(dim: int, seed: int) -> GaussianDataPrior:
    """Reference toy prior: mu = 0.5 z, Sigma random SPD with eigenvalues in [0.3, 1.5]."""
    rng = Rng(seed)
    mu = 0.5 * rng.fork("mu").normal(dim)
    sigma = SpdMatrix(random_spd(dim, rng.fork("sigma"), 0.3, 1.5))
    return GaussianDataPrior(mu, sigma)


def build_prior_field(cfg: ExperimentConfig, s: InterpolationSchedule):
    """Returns (field, prior-or-None). Analytic priors are synthesized from
    prior.seed; MLP priors load an FLWM checkpoint."""
    kind = cfg.get_str("prior.kind")
    if kind == "analytic_gaussian":
        dim = cfg.get_int("prior.dim")
        prior = synthesize_gaussian_prior(dim, cfg.get_int("prior.seed", 0))
        return AnalyticGaussianVelocity(prior, s), prior
    if kind == "mlp":
        field = load_checkpoint(cfg.get_str("prior.checkpoint"))
        return field, None
    raise ConfigError(f"unknown prior.kind {kind!r}")


def build_operator(cfg: ExperimentConfig, image_shape: tuple[int, ...]) -> LinearOperator:
    kind = cfg.get_str("operator.kind", "identity")
    if kind == "identity":
        return Identity(image_shape)
    if kind == "mask_random":
        return mask_random(
            image_shape, cfg.get_float("operator.mask_fraction"), cfg.get_int("operator.seed", 0)
        )
    if kind == "mask_box":
        if len(image_shape) != 2:
            raise ShapeError("mask_box needs a 2-D image")
        return mask_box_centered(*image_shape)
    if kind == "downsample_avg":
        if len(image_shape) != 2:
            raise ShapeError("downsample_avg needs a 2-D image")
        return DownsampleAvg(*image_shape, cfg.get_int("operator.factor", 2))
    if kind == "blur_gaussian":
        if len(image_shape) != 2:
            raise ShapeError("blur_gaussian needs a 2-D image")
        return BlurGaussian(
            *image_shape,
            cfg.get_int("operator.blur_kernel", 9),
            cfg.get_float("operator.blur_sigma", 1.5),
        )
    if kind == "dft_subsampled":
        n = int(np.prod(image_shape))
        return DftSubsampled(
            n,
            cfg.get_float("operator.rate", 0.5),
            cfg.get_int("operator.seed", 0),
            cfg.get_int("operator.sign_seed", 1),
        )
    raise ConfigError(f"unknown operator.kind {kind!r}")


def solver_config(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(
        n_steps=cfg.get_int("solver.n_steps", 100),
        inner_iters=cfg.get_int("solver.inner_iters", 10),
        step_size=cfg.get_float("solver.step_size", 1e-2),
        guidance_weight=cfg.get_float("solver.guidance_weight", 1e3),
        sigma_y=cfg.get_float("operator.sigma_y", 0.1),
        seed=cfg.get_int("solver.seed", 0),
        variant=cfg.get_str("solver.variant", "ictm"),
        exact_weight=cfg.get_bool("solver.exact_weight", False),
        outer_iters=cfg.get_int("solver.outer_iters", 300),
    )


def _dataset_images(cfg: ExperimentConfig, prior: GaussianDataPrior | None) -> list[np.ndarray]:
    """Ground truths, each with its own substream so counts can change safely."""
    kind = cfg.get_str("dataset.kind")
    count = cfg.get_int("dataset.count")
    seed = cfg.get_int("dataset.seed", 0)
    base = Rng(seed)
    images = []
    for i in range(count):
        r = base.fork(f"image-{i}")
        if kind == "gaussian":
            if prior is None:
                raise ConfigError("gaussian dataset needs an analytic_gaussian prior")
            images.append(prior.mu + prior.sigma.chol @ r.normal(prior.dim))
        elif kind == "smooth_blobs":
            images.append(
                smooth_blob_image(
                    cfg.get_int("dataset.height"),
                    cfg.get_int("dataset.width"),
                    cfg.get_int("dataset.n_blobs", 3),
                    r,
                )
            )
        elif kind == "checkerboard":
            images.append(
                checkerboard_image(
                    cfg.get_int("dataset.height"),
                    cfg.get_int("dataset.width"),
                    cfg.get_int("dataset.cell", 4),
                )
            )
        else:
            raise ConfigError(f"unknown dataset.kind {kind!r}")
    return images


def export_image(x: np.ndarray, path) -> None:
    """Write binary PGM (2-D input) or PPM (3xHxW input); values clamped to [0, 1]
    and quantized as floor(v * 255 + 0.5)."""
    x = as_tensor(x)
    quant = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    try:
        with open(path, "wb") as f:
            if x.ndim == 2:
                h, w = x.shape
                f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
                f.write(quant.tobytes())
            elif x.ndim == 3 and x.shape[0] == 3:
                _, h, w = x.shape
                f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
                f.write(np.moveaxis(quant, 0, 2).tobytes())
            else:
                raise ShapeError(f"expected HxW or 3xHxW image, got shape {x.shape}")
    except OSError as e:
        raise FlowmapError(f"failed to write image {path}: {e}") from e


def write_steps_csv(result: ReconstructionResult, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(STEPS_HEADER + "\n")
        for d in result.per_step:
            trace = "nan" if d.trace is None else repr(d.trace)
            f.write(f"{d.t!r},{d.objective!r},{d.residual!r},{trace}\n")


@dataclass
class RunManifest:
    config: ExperimentConfig
    content_hash: str
    rows: list[dict] = dc_field(default_factory=list)
    aggregates: dict[str, tuple[float, float]] = dc_field(default_factory=dict)
    failures: list[tuple[int, str]] = dc_field(default_factory=list)
    out_dir: str = ""

    def render(self) -> str:
        buf = io.StringIO()
        buf.write("# flowmap run manifest\n")
        buf.write(f"content_hash = {self.content_hash}\n")
        buf.write(f"images = {len(self.rows)}\n")
        buf.write(f"failures = {len(self.failures)}\n")
        for idx, msg in self.failures:
            buf.write(f"failure.{idx} = {msg}\n")
        for name, (mean, std) in sorted(self.aggregates.items()):
            buf.write(f"aggregate.{name}.mean = {mean!r}\n")
            buf.write(f"aggregate.{name}.std = {std!r}\n")
        buf.write("--- config ---\n")
        buf.write(self.config.echo())
        buf.write("--- rows ---\n")
        if self.rows:
            cols = list(self.rows[0].keys())
            buf.write(",".join(cols) + "\n")
            for row in self.rows:
                buf.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")
        return buf.getvalue()


def read_manifest_config(path) -> ExperimentConfig:
    """Extract and parse the config echo block from a manifest file."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        block = text.split("--- config ---\n", 1)[1].split("--- rows ---\n", 1)[0]
    except IndexError:
        raise ConfigError(f"{path}: no config block found") from None
    return parse_config(block)


def _aggregate(values: list[float]) -> tuple[float, float]:
    arr = np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Run the configured pipeline over the whole dataset and persist results."""
    task = cfg.get_str("task")
    if task not in ("denoise_gaussian_toy", "image_recon"):
        raise ConfigError(f"run_experiment cannot handle task {task!r}")
    out_dir = Path(cfg.get_str("output.dir"))
    out_dir.mkdir(parents=True, exist_ok=True)

    s = build_schedule(cfg)
    field, prior = build_prior_field(cfg, s)
    images = _dataset_images(cfg, prior)
    scfg = solver_config(cfg)
    sigma_y = scfg.sigma_y
    solver_seed = scfg.seed

    hasher = hashlib.sha256()
    hasher.update(cfg.echo().encode("utf-8"))

    def solve_one(idx_img):
        idx, img = idx_img
        flat = img.ravel()
        if flat.shape[0] != field.dim:
            raise ShapeError(f"image dim {flat.shape[0]} != prior dim {field.dim}")
        operator = build_operator(cfg, img.shape)
        model = MeasurementModel(operator, sigma_y)
        rng = Rng(solver_seed).fork(f"image-{idx}")
        y = measure(model, flat, rng.fork("measurement-noise"))
        result = solve(scfg, field, s, operator, y, rng.fork("solver"))
        return idx, img, y, result

    workers = max(1, int(os.environ.get("FLOWMAP_THREADS", "1")))
    tasks = list(enumerate(images))
    outcomes: list = [None] * len(tasks)
    failures: list[tuple[int, str]] = []
    if workers == 1:
        for idx_img in tasks:
            try:
                outcomes[idx_img[0]] = solve_one(idx_img)
            except FlowmapError as e:
                failures.append((idx_img[0], str(e)))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(solve_one, t): t[0] for t in tasks}
            for fut, idx in futs.items():
                try:
                    outcomes[idx] = fut.result()
                except FlowmapError as e:
                    failures.append((idx, str(e)))
    failures.sort()

    rows = []
    for outcome in outcomes:
        if outcome is None:
            continue
        idx, img, y, result = outcome
        recon = result.x1.reshape(img.shape)
        report = metric_report(recon, img)
        row = {
            "image_index": idx,
            "psnr": report.psnr,
            "ssim": report.ssim,
            "mse": report.mse,
            "wall_time_s": result.wall_time_s,
        }
        if task == "denoise_gaussian_toy":
            x_star = gaussian_map_oracle(prior, y, sigma_y)
            row["mse_to_oracle"] = float(np.mean((result.x1 - x_star) ** 2))
        rows.append(row)
        save_tensor(img, out_dir / f"x_true_{idx:03d}.ften")
        save_tensor(y, out_dir / f"y_{idx:03d}.ften")
        save_tensor(recon, out_dir / f"x_recon_{idx:03d}.ften")
        write_steps_csv(result, out_dir / f"steps_{idx:03d}.csv")
        for data in (img, y):
            hasher.update(as_tensor(data).tobytes())

    with open(out_dir / "metrics.csv", "w", encoding="utf-8") as f:
        f.write(METRICS_HEADER + "\n")
        for row in rows:
            f.write(
                f"{row['image_index']},{row['psnr']!r},{row['ssim']!r},"
                f"{row['mse']!r},{row['wall_time_s']!r}\n"
            )

    aggregates = {}
    for name in ("psnr", "ssim", "mse", "mse_to_oracle"):
        vals = [row[name] for row in rows if name in row]
        if vals:
            aggregates[name] = _aggregate(vals)

    manifest = RunManifest(
        config=cfg,
        content_hash=hasher.hexdigest(),
        rows=rows,
        aggregates=aggregates,
        failures=failures,
        out_dir=str(out_dir),
    )
    with open(out_dir / "manifest.txt", "w", encoding="utf-8") as f:
        f.write(manifest.render())
    return manifest


def train_from_config(cfg: ExperimentConfig) -> tuple[MlpVelocity, np.ndarray]:
    """Train an MLP prior on the configured dataset and save the checkpoint."""
    s = build_schedule(cfg)
    kind = cfg.get_str("dataset.kind")
    if kind == "smooth_blobs":
        h, w = cfg.get_int("dataset.height"), cfg.get_int("dataset.width")
        sampler = blob_sampler(h, w, cfg.get_int("dataset.n_blobs", 3))
        dim = h * w
    elif kind == "gaussian":
        prior = synthesize_gaussian_prior(cfg.get_int("prior.dim"), cfg.get_int("prior.seed", 0))
        sampler = gaussian_prior_sampler(prior)
        dim = prior.dim
    else:
        raise ConfigError(f"cannot train on dataset.kind {kind!r}")
    hidden_raw = cfg.get_str("prior.hidden", "128x128")
    try:
        hidden = tuple(int(p) for p in hidden_raw.split("x"))
        assert len(hidden) == 2
    except (ValueError, AssertionError):
        raise ConfigError(f"prior.hidden must look like '128x128', got {hidden_raw!r}") from None

    rng = Rng(cfg.get_int("training.seed", 0))
    field = MlpVelocity(dim, hidden).init_weights(rng.fork("init"))
    field, losses = train_flow_matching(
        field,
        sampler,
        s,
        steps=cfg.get_int("training.steps", 3000),
        batch=cfg.get_int("training.batch", 64),
        lr=cfg.get_float("training.lr", 1e-3),
        rng=rng,
    )
    ckpt = cfg.get_str("output.checkpoint")
    Path(ckpt).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(field, ckpt)
    return field, losses


def validate_toy(cfg: ExperimentConfig) -> dict:
    """Denoising validation against the closed-form MAP: runs the solver per
    measurement, writes pooled coordinate differences binned as a histogram
    CSV, and returns summary statistics."""
    out_dir = Path(cfg.get_str("output.dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    s = build_schedule(cfg)
    field, prior = build_prior_field(cfg, s)
    if prior is None:
        raise ConfigError("validate_toy needs an analytic_gaussian prior")
    scfg = solver_config(cfg)
    count = cfg.get_int("dataset.count", 50)
    operator = Identity((prior.dim,))
    model = MeasurementModel(operator, scfg.sigma_y)

    diffs = []
    mses = []
    base = Rng(cfg.get_int("dataset.seed", 0))
    for i in range(count):
        r = base.fork(f"image-{i}")
        x_true = prior.mu + prior.sigma.chol @ r.fork("data").normal(prior.dim)
        y = measure(model, x_true, r.fork("measurement-noise"))
        result = solve(scfg, field, s, operator, y, r.fork("solver"))
        x_star = gaussian_map_oracle(prior, y, scfg.sigma_y)
        diffs.append(result.x1 - x_star)
        mses.append(float(np.mean((result.x1 - x_star) ** 2)))
    pooled = np.concatenate(diffs)
    counts, edges = np.histogram(pooled, bins=40)
    with open(out_dir / "map_diff_hist.csv", "w", encoding="utf-8") as f:
        f.write("bin_left,bin_right,count\n")
        for k in range(counts.shape[0]):
            f.write(f"{edges[k]!r},{edges[k+1]!r},{counts[k]}\n")
    summary = {
        "count": count,
        "mean_mse_to_oracle": float(np.mean(mses)),
        "max_abs_diff": float(np.abs(pooled).max()),
    }
    return summary
