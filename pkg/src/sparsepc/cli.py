"""Command-line entry point.

Exit status: 0 on success, 2 for configuration/input errors, 3 for
numerical failures (failed solves or rows with an error marker).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import crossval as cv
from .experiment import (ConfigError, ExperimentConfig, ForwardModel, build_reference, diagnose,
                         run_experiment, write_diagnose)
from .oracle import CoefficientVector, save_coefficients, statistics
from .sampling import load_measurement
from .solvers import recover

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("sparsepc")


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg = cfg.with_seeds([args.seed])
    return cfg


def _load_problem(args):
    if not args.matrix or not args.values:
        raise ConfigError("--matrix and --values are required")
    try:
        m = load_measurement(args.matrix)
        u = np.loadtxt(args.values, delimiter=",", comments="#", ndmin=1).ravel()
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read problem: {exc}") from exc
    if u.size != m.shape[0]:
        raise ConfigError(f"{u.size} values for a {m.shape[0]}-row matrix")
    return m, u


def _plan(args, n, u):
    return cv.CrossValPlan.default(n, u, replications=args.replications,
                                   seed=args.seed or 0)


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg, threads=args.threads)
    out = report.write(args.out)
    print(f"wrote {len(report.rows)} rows to {out / 'report.csv'}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_NUMERIC


def cmd_diagnose(args) -> int:
    rows, medians = diagnose(_load_config(args))
    write_diagnose(rows, medians, args.out)
    for r in medians:
        print(f"n={r['n']:>6} p={r['p']} extra={r['extra']}  median mu={r['median_mu']:.4f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load_config(args)
    if cfg.reference is None:
        raise ConfigError("config has no reference section")
    ref = build_reference(cfg, ForwardModel(cfg), args.threads)
    if ref.coefficients is None:
        print(ref.note, file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_coefficients(ref.coefficients, out / "reference.csv")
    (out / "reference.json").write_text(json.dumps(
        {"mean": ref.mean, "std_dev": ref.std_dev, "solves": ref.solves}, indent=2))
    print(f"reference mean={ref.mean:.10g} std={ref.std_dev:.10g} ({ref.solves} solves)")
    return EXIT_OK


def cmd_recover(args) -> int:
    m, u = _load_problem(args)
    delta = args.delta
    if delta is None:
        delta = cv.estimate_delta(None, u, m.basis, args.solver, _plan(args, len(u), u),
                                  matrix=m, threads=args.threads).chosen_delta
    res = recover(m, u, delta, args.solver)
    c = CoefficientVector(m.basis, res.coefficients)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_coefficients(c, out / "coefficients.csv")
    mean, std = statistics(c)
    (out / "recovery.json").write_text(json.dumps({
        "solver": res.solver, "delta": delta, "residual_norm": res.residual_norm,
        "iterations": res.iterations, "status": res.status, "support": res.support,
        "mean": mean, "std_dev": std}, indent=2))
    print(f"{res.solver}: |support|={len(res.support)} residual={res.residual_norm:.3e} "
          f"status={res.status}")
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_crossval(args) -> int:
    m, u = _load_problem(args)
    res = cv.estimate_delta(None, u, m.basis, args.solver, _plan(args, len(u), u),
                            matrix=m, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cv.export_curve(res, out / "validation_curve.csv")
    print(f"delta_r_hat={res.delta_r_hat:.6g} chosen_delta={res.chosen_delta:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (JSON)")
    common.add_argument("--seed", type=int, default=None, help="override the seed list")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument("--matrix", help="measurement matrix CSV")
    problem.add_argument("--values", help="sample values, one per line")
    problem.add_argument("--solver", choices=["omp", "bpdn"], default="bpdn")
    problem.add_argument("--replications", type=int, default=4)

    parser = argparse.ArgumentParser(
        prog="sparsepc", description="Sparse Legendre chaos recovery from random samples.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("recover", parents=[common, problem],
                       help="recover coefficients from a matrix and sample values")
    p.add_argument("--delta", type=float, default=None,
                   help="residual tolerance (cross-validated when omitted)")
    p.set_defaults(func=cmd_recover)
    sub.add_parser("experiment", parents=[common], help="run a configured experiment"
                   ).set_defaults(func=cmd_experiment)
    sub.add_parser("diagnose", parents=[common], help="coherence and sparsity budget table"
                   ).set_defaults(func=cmd_diagnose)
    sub.add_parser("oracle", parents=[common], help="tensor-quadrature reference coefficients"
                   ).set_defaults(func=cmd_oracle)
    sub.add_parser("crossval", parents=[common, problem], help="export a validation curve"
                   ).set_defaults(func=cmd_crossval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, ArithmeticError, cv.CrossValidationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
