"""Command-line entry point.

Subcommands: train, solve, run, validate-toy, analyze, metrics, export.
The worker count for batch runs is capped by FLOWMAP_THREADS (default 1 for
bit-reproducibility).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .analysis import compliance_measure, decomposition_gap
from .config import load_config
from .errors import FlowmapError
from .harness import (
    build_operator,
    build_prior_field,
    build_schedule,
    export_image,
    run_experiment,
    solver_config,
    train_from_config,
    validate_toy,
    write_steps_csv,
    _dataset_images,
)
from .metrics import metric_report
from .operators import MeasurementModel, measure
from .solvers import euler_rollout, solve
from .tensor import Rng, load_tensor, save_tensor


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    _, losses = train_from_config(cfg)
    print(f"trained {cfg.get_str('dataset.kind')} prior; "
          f"loss {losses[:50].mean():.5f} -> {losses[-50:].mean():.5f}; "
          f"checkpoint {cfg.get_str('output.checkpoint')}")
    return 0


def _cmd_solve(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    s = build_schedule(cfg)
    field, prior = build_prior_field(cfg, s)
    image = _dataset_images(cfg, prior)[0]
    operator = build_operator(cfg, image.shape)
    scfg = solver_config(cfg)
    rng = Rng(scfg.seed).fork("image-0")
    y = measure(MeasurementModel(operator, scfg.sigma_y), image.ravel(), rng.fork("measurement-noise"))
    result = solve(scfg, field, s, operator, y, rng.fork("solver"))
    save_tensor(image, out / "x_true.ften")
    save_tensor(y, out / "y.ften")
    save_tensor(result.x1.reshape(image.shape), out / "x_recon.ften")
    write_steps_csv(result, out / "steps.csv")
    report = metric_report(result.x1.reshape(image.shape), image)
    print(f"solved variant={scfg.variant} psnr={report.psnr:.3f} mse={report.mse:.6g} "
          f"wall_time={result.wall_time_s:.2f}s -> {out}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    manifest = run_experiment(cfg)
    n_ok = len(manifest.rows)
    print(f"ran {n_ok} image(s), {len(manifest.failures)} failure(s) -> {manifest.out_dir}")
    for name, (mean, std) in sorted(manifest.aggregates.items()):
        print(f"  {name}: {mean:.6g} +- {std:.6g}")
    if manifest.failures and not manifest.rows:
        return 1
    if cfg.get_int("dataset.count") == 0:
        print("warning: empty dataset, nothing to do")
    return 0


def _cmd_validate_toy(args) -> int:
    cfg = load_config(args.config)
    summary = validate_toy(cfg)
    print(
        f"validated {summary['count']} measurements: "
        f"mean per-coordinate MSE to closed-form MAP = {summary['mean_mse_to_oracle']:.3e}, "
        f"max |diff| = {summary['max_abs_diff']:.3e}"
    )
    return 0


def _cmd_analyze(args) -> int:
    from .harness import synthesize_gaussian_prior
    from .operators import Identity
    from .schedule import ot_schedule
    from .velocity import AnalyticGaussianVelocity, MlpVelocity, train_flow_matching
    from .datasets import gaussian_prior_sampler

    s = ot_schedule()
    if args.what == "theorem1":
        dim, sigma_y = 16, 0.02
        prior = synthesize_gaussian_prior(dim, seed=0)
        field = AnalyticGaussianVelocity(prior, s)
        rng = Rng(0)
        x0 = rng.fork("x0").normal(dim)
        x1 = field.flow_map(x0, 1.0)
        y = x1 + sigma_y * rng.fork("noise").normal(dim)
        operator = Identity((dim,))
        print("N,gap")
        for n in (5, 10, 20, 40, 80):
            gap, _ = decomposition_gap(prior, s, operator, y, x0, n, sigma_y)
            print(f"{n},{gap!r}")
        return 0
    if args.what == "compliance":
        dim = 2
        prior = synthesize_gaussian_prior(dim, seed=3)
        rng = Rng(3)
        field = MlpVelocity(dim, (64, 64)).init_weights(rng.fork("init"))
        field, _ = train_flow_matching(
            field, gaussian_prior_sampler(prior), s, steps=4000, batch=128, lr=1e-3, rng=rng
        )
        pair_rng = Rng(4)

        def sampler(n):
            z0 = pair_rng.normal((n, dim))
            z1 = np.stack([euler_rollout(field, z, 128) for z in z0])
            return z0, z1

        report = compliance_measure(field, s, sampler, mc_samples=256)
        print(f"S = {report.s_value:.6f} +- {report.s_standard_error:.6f}")
        print(f"max E||z_hat - z||^2 over grid = {report.per_t_deviation.max():.6f}")
        print(f"bound satisfied: {report.bound_satisfied}")
        return 0
    raise FlowmapError(f"unknown analysis {args.what!r}")


def _cmd_metrics(args) -> int:
    a = load_tensor(args.a)
    b = load_tensor(args.b)
    report = metric_report(a, b)
    print(f"{report.psnr!r},{report.ssim!r},{report.mse!r}")
    return 0


def _cmd_export(args) -> int:
    x = load_tensor(getattr(args, "in"))
    export_image(x, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmap",
        description="MAP reconstruction for linear inverse problems under flow-matching priors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an MLP prior and write a checkpoint")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("solve", help="solve a single configured problem")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("run", help="run the batch pipeline and write a manifest")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("validate-toy", help="solver vs closed-form MAP on the Gaussian toy")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_validate_toy)

    p = sub.add_parser("analyze", help="run a built-in theory check")
    p.add_argument("--what", required=True, choices=("theorem1", "compliance"))
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("metrics", help="print psnr,ssim,mse for two FTEN tensors")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("export", help="export an FTEN tensor as PGM/PPM")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FlowmapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
