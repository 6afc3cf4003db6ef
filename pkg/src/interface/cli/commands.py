"""Command-line verbs: run, suite, summarize, ntk-check, kernel, serve."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import ValidationError

from src.application.uses_cases.harness.experiment_service import run_experiment, run_suite, summarize_experiment
from src.application.uses_cases.ntk.ntk_service import (
    convergence_study,
    info_gain_curve,
    monte_carlo_value,
    ntk_matrix,
    ntk_value,
)
from src.core.config import resolve_output_dir
from src.core.errors import ConfigurationError, InputError, NeuralBOError
from src.core.logging import configure_logging
from src.domain.models import InitScheme, OptimizerKind
from src.infrastructure.trace_store import read_json, write_info_gain, write_kernel_matrix, write_rows
from src.interface.schemas.experiments import ExperimentConfig, ExperimentReport, SuiteConfig

logger = logging.getLogger(__name__)

EXIT_FAILURE = 2

# flag -> (group, field); group None is the top level of the config document
OVERRIDES = {
    "objective": (None, "objective"),
    "budget": (None, "budget"),
    "master_seed": (None, "master_seed"),
    "initial_design": (None, "initial_design"),
    "workers": (None, "workers"),
    "output_dir": (None, "output_dir"),
    "width": ("network", "width"),
    "depth": ("network", "depth"),
    "nu": ("exploration", "nu"),
    "nu_grid": ("exploration", "nu_grid"),
    "candidates": ("acquisition", "n_candidates"),
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--output-dir", type=Path, default=None, help="results root (NEURALBO_OUTPUT_DIR wins)")
    parser.add_argument("--log-level", default="INFO")


def _add_experiment_flags(parser: argparse.ArgumentParser, suite: bool) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON experiment document")
    parser.add_argument("--objective", help="benchmark id such as ackley-10")
    if suite:
        parser.add_argument("--optimizer", action="append", choices=[k.value for k in OptimizerKind],
                            help="repeat to list several optimizers")
    else:
        parser.add_argument("--optimizer", choices=[k.value for k in OptimizerKind])
    parser.add_argument("--budget", type=int, help="optimization iterations T")
    parser.add_argument("--repeats", type=int, help="seeds 0..repeats-1")
    parser.add_argument("--master-seed", type=int)
    parser.add_argument("--width", type=int)
    parser.add_argument("--depth", type=int)
    parser.add_argument("--nu", type=float, help="fixed exploration scale")
    parser.add_argument("--nu-grid", type=float, nargs="+", help="run NeuralBO once per scale and keep the best")
    parser.add_argument("--candidates", type=int, help="candidate points per iteration")
    parser.add_argument("--initial-design", type=int)
    parser.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neuralbo", description="Neural-network Thompson sampling experiments.")
    verbs = parser.add_subparsers(dest="command", required=True)

    run = verbs.add_parser("run", help="run one optimizer over a seed list")
    _add_experiment_flags(run, suite=False)
    _add_common(run)

    suite = verbs.add_parser("suite", help="run several optimizers on shared seeds and initial designs")
    _add_experiment_flags(suite, suite=True)
    _add_common(suite)

    summarize = verbs.add_parser("summarize", help="rebuild summary.json from trace files")
    summarize.add_argument("experiment_dir", type=Path)
    _add_common(summarize)

    check = verbs.add_parser("ntk-check", help="finite-width kernel convergence study")
    check.add_argument("--widths", type=int, nargs="+", default=[64, 512, 4096])
    check.add_argument("--depth", type=int, default=2)
    check.add_argument("--input-dim", type=int, default=5)
    check.add_argument("--pairs", type=int, default=20)
    check.add_argument("--seeds", type=int, default=1, help="initialisations averaged per width")
    check.add_argument("--scheme", choices=[s.value for s in InitScheme if s is not InitScheme.EXPERIMENT],
                       default=InitScheme.NTK_MATCHED.value)
    check.add_argument("--mc-samples", type=int, default=0, help="also compare against a Monte-Carlo estimate")
    check.add_argument("--master-seed", type=int, default=0)
    _add_common(check)

    kernel = verbs.add_parser("kernel", help="export the analytic NTK matrix and info-gain curve of a point set")
    kernel.add_argument("--points", type=Path, default=None, help="CSV of points, one per row")
    kernel.add_argument("--n-points", type=int, default=20, help="random unit-sphere points when --points is absent")
    kernel.add_argument("--input-dim", type=int, default=5)
    kernel.add_argument("--depth", type=int, default=2)
    kernel.add_argument("--lam", type=float, default=1.0)
    kernel.add_argument("--normalize", action="store_true")
    kernel.add_argument("--master-seed", type=int, default=0)
    _add_common(kernel)

    serve = verbs.add_parser("serve", help="serve the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    _add_common(serve)
    return parser


def load_config(args: argparse.Namespace, suite: bool = False) -> ExperimentConfig:
    """Config file first, then flags on top."""
    payload = dict(read_json(args.config)) if args.config else {}
    for flag, (group, key) in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        target = payload.setdefault(group, {}) if group else payload
        target[key] = str(value) if isinstance(value, Path) else value
    if args.repeats is not None:
        payload["repeats"] = args.repeats
        payload["seeds"] = list(range(args.repeats))
    if args.optimizer:
        if suite:
            payload["optimizers"] = args.optimizer
        else:
            payload["optimizer"] = args.optimizer
    model = SuiteConfig if suite else ExperimentConfig
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid experiment configuration: {exc}") from exc


def _log_report(report: ExperimentReport) -> None:
    for kind, summary in report.summaries.items():
        logger.info(
            "%s: %d completed, %d failed, final median %s (IQR %s .. %s)",
            OptimizerKind(kind).value, len(summary.completed_seeds), len(summary.failed),
            summary.final_median, summary.final_lower_quartile, summary.final_upper_quartile,
        )
    if report.nu_search is not None:
        logger.info("nu grid %s: best %s", report.nu_search.values, report.nu_search.best)


def cmd_run(args: argparse.Namespace) -> int:
    report = run_experiment(load_config(args))
    _log_report(report)
    return 0 if all(not s.failed for s in report.summaries.values()) else 1


def cmd_suite(args: argparse.Namespace) -> int:
    report = run_suite(load_config(args, suite=True))
    _log_report(report)
    return 0 if all(not s.failed for s in report.summaries.values()) else 1


def cmd_summarize(args: argparse.Namespace) -> int:
    _log_report(summarize_experiment(args.experiment_dir))
    return 0


def cmd_ntk_check(args: argparse.Namespace) -> int:
    rows = convergence_study(
        widths=args.widths,
        depth=args.depth,
        input_dim=args.input_dim,
        n_pairs=args.pairs,
        n_seeds=args.seeds,
        scheme=args.scheme,
        seed=args.master_seed,
    )
    root = resolve_output_dir(args.output_dir)
    path = write_rows(root / "ntk-check.csv", ("width", "median_abs_deviation", "max_abs_deviation", "diagonal_ratio"),
                      [[r.width, repr(r.median_abs_deviation), repr(r.max_abs_deviation), repr(r.diagonal_ratio)] for r in rows])
    logger.info("convergence table written to %s", path)
    medians = [r.median_abs_deviation for r in rows]
    ok = all(b <= a for a, b in zip(medians, medians[1:]))
    if not ok:
        logger.warning("median deviation is not non-increasing across widths: %s", medians)
    if args.mc_samples > 0:
        rng = np.random.default_rng(args.master_seed)
        X = rng.standard_normal((2 * args.pairs, args.input_dim))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        z = []
        for a, b in zip(X[:args.pairs], X[args.pairs:]):
            estimate = monte_carlo_value(a, b, args.depth, args.mc_samples, rng)
            z.append(abs(estimate.mean - ntk_value(a, b, args.depth)) / estimate.stderr)
        logger.info("Monte-Carlo agreement: max |z| = %.3f over %d pairs", max(z), len(z))
    return 0 if ok else 1


def cmd_kernel(args: argparse.Namespace) -> int:
    if args.points is not None:
        try:
            points = np.loadtxt(args.points, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read points from {args.points}: {exc}") from exc
    else:
        rng = np.random.default_rng(args.master_seed)
        points = rng.standard_normal((args.n_points, args.input_dim))
        points /= np.linalg.norm(points, axis=1, keepdims=True)
    kernel = ntk_matrix(points, args.depth, normalize=args.normalize)
    root = resolve_output_dir(args.output_dir)
    matrix_path = write_kernel_matrix(root / "kernel-matrix.csv", kernel.points, kernel.matrix)
    gain_path = write_info_gain(root / "info-gain.csv", info_gain_curve(kernel, args.lam))
    logger.info("kernel matrix of %d points written to %s, info gain to %s", kernel.size, matrix_path, gain_path)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("main:app", host=args.host, port=args.port)
    return 0


COMMANDS = {
    "run": cmd_run,
    "suite": cmd_suite,
    "summarize": cmd_summarize,
    "ntk-check": cmd_ntk_check,
    "kernel": cmd_kernel,
    "serve": cmd_serve,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except NeuralBOError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
