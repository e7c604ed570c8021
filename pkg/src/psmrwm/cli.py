"""Command-line entry point: ``python -m psmrwm <command> ...``.

Every command writes CSV (to ``--out`` or stdout) and exits 0 only when
all of its checks pass.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ._io import fmt
from . import diagnostics, theory
from .experiment import ExperimentConfig, PilotResult, run_grid_experiment
from .gp_target import GpDataset, GpLogisticTarget, simulate_dataset
from .noise import Gaussian, Laplace, NoNoise, make_noise
from .sampler import (
    ChainConfig,
    run_chain,
    scaling_from_ell,
    standard_normal_log_density,
    synthetic_noise_target,
)

CERTIFY_SUITE = (
    NoNoise(),
    Gaussian(0.5),
    Gaussian(1.0),
    Gaussian(2.0),
    Gaussian(3.0),
    Laplace(0.3),
    Laplace(0.6),
)


def _open_out(path):
    return open(path, "w", newline="") if path else contextlib.nullcontext(sys.stdout)


def _noise_args(p):
    p.add_argument("--noise", default="gaussian",
                   choices=["none", "gaussian", "laplace", "twopoint", "empirical"])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--scale", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--p-star", type=float, default=0.5)
    p.add_argument("--samples", help="CSV of W* draws (column w_star) for --noise empirical")


def _noise(args):
    return make_noise(args.noise, sigma=args.sigma, scale=args.scale,
                           epsilon=args.epsilon, p_star=args.p_star, path=args.samples)


def cmd_theory_curve(args):
    noise = _noise(args)
    ells = np.linspace(args.lmin, args.lmax, args.steps)
    curve = theory.efficiency_curve(noise, ells)
    if args.out:
        curve.to_csv(args.out)
    else:
        print("ell,j")
        for el, j in zip(curve.ells, curve.j_values):
            print(f"{fmt(el)},{fmt(j)}")
    return 0


def cmd_theory_optimal(args):
    noise = _noise(args)
    ell_hat, j_hat = theory.optimal_scaling(noise, (args.lmin, args.lmax))
    with _open_out(args.out) as fh:
        fh.write("noise,ell_hat,j_hat\n")
        fh.write(f"{noise.describe()},{fmt(ell_hat)},{fmt(j_hat)}\n")
    return 0


def cmd_theory_scan(args):
    grid = np.linspace(0.05, 0.95, args.grid)
    ell_hats = theory.twopoint_scan(grid, grid)
    theory.write_twopoint_csv(args.out or "twopoint_scan.csv", grid, grid, ell_hats)
    print(f"ell_hat range [{ell_hats.min():.4f}, {ell_hats.max():.4f}]", file=sys.stderr)
    return 0


def cmd_theory_certify(args):
    suite = [_noise(args)] if args.single else CERTIFY_SUITE
    certs = [theory.certify_theorem(n, strict=False) for n in suite]
    with _open_out(args.out) as fh:
        theory.write_certificates_csv(fh, certs)
    failed = [c for c in certs if not c.passed]
    for c in failed:
        print(f"FAILED {c.noise}: {c.violations}", file=sys.stderr)
    return 1 if failed else 0


def cmd_verify_lemma(args):
    report = theory.verify_lemma()
    ok = report.ok(args.tol)
    with _open_out(args.out) as fh:
        fh.write("check,value\n")
        fh.write(f"min_log_upper_margin,{fmt(report.min_log_upper_margin)}\n")
        fh.write(f"min_lower_margin,{fmt(report.min_lower_margin)}\n")
        fh.write(f"identity_max_abs_err,{fmt(report.identity_max_abs_err)}\n")
        fh.write(f"df_db_at_zero,{fmt(report.df_db_at_zero)}\n")
        fh.write(f"df_db_far,{fmt(report.df_db_far)}\n")
        fh.write(f"max_df_db,{fmt(report.max_df_db)}\n")
        for k, v in report.fd_max_rel_err.items():
            fh.write(f"fd_rel_err_{k},{fmt(v)}\n")
        fh.write(f"passed,{ok}\n")
    return 0 if ok else 1


def cmd_sample_synthetic(args):
    noise = Gaussian(args.sigma) if args.sigma > 0 else NoNoise()
    target = synthetic_noise_target(standard_normal_log_density, noise, args.d)
    lam = scaling_from_ell(args.ell, args.d)
    x0 = np.random.default_rng(args.seed).standard_normal(args.d)
    res = run_chain(ChainConfig(lam, np.eye(args.d), args.iters, args.seed, x0), target,
                    keep_chain=bool(args.save_chain))
    if args.save_chain:
        res.to_csv(args.save_chain)
    burn = args.iters // 10
    acc = diagnostics.acceptance_rate(res.accept_flags, burn)
    esjd = float(res.sq_jumps[burn:].mean())
    with _open_out(args.out) as fh:
        fh.write("d,sigma,ell,iters,accept_rate,accept_theory,esjd_scaled,j_theory\n")
        fh.write(f"{args.d},{fmt(args.sigma)},{fmt(args.ell)},{args.iters},{fmt(acc)},"
                 f"{fmt(theory.acceptance_limit(noise, args.ell))},{fmt(esjd)},"
                 f"{fmt(theory.j_esjd(noise, args.ell))}\n")
    return 0


def cmd_gp_simulate(args):
    simulate_dataset(n=args.n, seed=args.seed).to_json(args.out)
    return 0


def cmd_gp_run(args):
    dataset = GpDataset.from_json(args.data)
    d = dataset.dim
    if args.pilot:
        pilot = PilotResult.from_json(args.pilot)
        v_hat, x0 = pilot.v_hat, pilot.posterior_mean
    else:
        v_hat, x0 = np.eye(d), np.zeros(d)
    res = run_chain(ChainConfig(args.lam, v_hat, args.iters, args.seed, x0),
                    GpLogisticTarget(dataset, args.m))
    if args.save_chain:
        res.to_csv(args.save_chain)
    report = diagnostics.ess_report(res.chain)
    times = "," if args.no_timing else f"{fmt(res.wall_seconds)},{fmt(res.cpu_seconds)}"
    with _open_out(args.out) as fh:
        fh.write("m,lambda,iters,accept_rate,min_ess,wall_s,cpu_s\n")
        fh.write(f"{args.m},{fmt(args.lam)},{args.iters},{fmt(res.acceptance_rate)},"
                 f"{fmt(report.min_ess)},{times}\n")
    return 0


def cmd_gp_grid(args):
    config = ExperimentConfig.from_json(args.config, output_dir=args.out_dir, workers=args.workers,
                                        timing=False if args.no_timing else None)
    result = run_grid_experiment(config)
    flagged = [c for c in result.cells if c.budget_exhausted]
    for c in flagged:
        print(f"cell m={c.m} lambda={c.lam}: min ESS {c.min_ess:.0f} below floor", file=sys.stderr)
    return 0


def cmd_gp_noise_study(args):
    dataset = GpDataset.from_json(args.data)
    if args.x_ref:
        x_ref = np.array(json.loads(args.x_ref), dtype=float)
    elif args.pilot:
        x_ref = PilotResult.from_json(args.pilot).posterior_mean
    else:
        x_ref = dataset.true_x
    rows = diagnostics.noise_study(lambda m: GpLogisticTarget(dataset, m), x_ref,
                                   args.m_list, args.reps, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diagnostics.write_kde_csv(out / "noise_kde.csv", rows)
    with open(out / "noise_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m", "variance", "skewness"])
        for r in rows:
            writer.writerow([r.m, fmt(r.variance), fmt(r.skewness)])
    if len(rows) >= 3:
        slope, se = diagnostics.variance_slope([r.m for r in rows], [r.variance for r in rows])
        print(f"log-variance slope in log m: {slope:.3f} +/- {se:.3f}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psmrwm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    th = sub.add_parser("theory", help="limiting efficiency computations")
    thsub = th.add_subparsers(dest="action", required=True)
    p = thsub.add_parser("curve")
    _noise_args(p)
    p.add_argument("--lmin", type=float, default=0.05)
    p.add_argument("--lmax", type=float, default=10.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory_curve)
    p = thsub.add_parser("optimal")
    _noise_args(p)
    p.add_argument("--lmin", type=float, default=0.05)
    p.add_argument("--lmax", type=float, default=10.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory_optimal)
    p = thsub.add_parser("scan-twopoint")
    p.add_argument("--grid", type=int, default=19)
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory_scan)
    p = thsub.add_parser("certify")
    _noise_args(p)
    p.add_argument("--single", action="store_true",
                   help="certify only the noise given by the flags, not the built-in suite")
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory_certify)

    p = sub.add_parser("verify-lemma")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_lemma)

    sm = sub.add_parser("sample")
    smsub = sm.add_subparsers(dest="action", required=True)
    p = smsub.add_parser("synthetic")
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--ell", type=float, default=2.38)
    p.add_argument("--iters", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-chain")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample_synthetic)

    gp = sub.add_parser("gp")
    gpsub = gp.add_subparsers(dest="action", required=True)
    p = gpsub.add_parser("simulate")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gp_simulate)
    p = gpsub.add_parser("run")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pilot", help="pilot.json with v_hat and posterior_mean")
    p.add_argument("--save-chain")
    p.add_argument("--no-timing", action="store_true", help="leave the time columns blank")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gp_run)
    p = gpsub.add_parser("grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-timing", action="store_true", help="leave time-derived columns blank")
    p.set_defaults(func=cmd_gp_grid)
    p = gpsub.add_parser("noise-study")
    p.add_argument("--data", required=True)
    p.add_argument("--m-list", type=int, nargs="+", default=[20, 200])
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x-ref", help="JSON list; defaults to the pilot mean or the true x")
    p.add_argument("--pilot")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_gp_noise_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
