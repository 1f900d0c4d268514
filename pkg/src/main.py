"""
Sparse Splitting Lab - command line entry point.

Subcommands generate dictionaries and datasets, run the classic solvers,
train and evaluate unrolled networks, trace the gap condition, run the
Monte-Carlo verification suite and reproduce the depth-curve experiments.

Exit codes: 0 success, 1 runtime or I/O error (or a failed verification), 2 usage error.
"""
import argparse
import logging
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

# Load environment variables from .env file
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # dotenv not available, use system environment variables

try:
    from .models import (
        BernoulliGaussianModel, Dictionary, ExperimentConfig, ExperimentArtifacts, ResultRow, ResultTable, NETWORK_KINDS
    )
    from .config_manager import ConfigManager, config_to_dict
    from .exceptions import SparseLabError, ConfigurationError, InvalidArgumentError
    from .error_handler import ErrorHandler, create_error_context
    from .experiments import run_layer_experiment, run_fig_gap, run_mc_verify
    from .factorization import bound_suite
    from .generic_gap import gap_trace
    from .lasso_core import (
        build_problem, lasso_cost, sample_gaussian_dictionary, sample_codes, adversarial_fourier_dictionary
    )
    from .matrix_io import load_matrix, save_matrix, load_dataset, save_dataset, load_model, save_model
    from .report_generator import ReportGenerator
    from .solvers import ista, fista, reference_solution, fixed_point_residual
    from .training import train, mean_cost_gap
    from .networks import forward
except ImportError:
    from models import (
        BernoulliGaussianModel, Dictionary, ExperimentConfig, ExperimentArtifacts, ResultRow, ResultTable, NETWORK_KINDS
    )
    from config_manager import ConfigManager, config_to_dict
    from exceptions import SparseLabError, ConfigurationError, InvalidArgumentError
    from error_handler import ErrorHandler, create_error_context
    from experiments import run_layer_experiment, run_fig_gap, run_mc_verify
    from factorization import bound_suite
    from generic_gap import gap_trace
    from lasso_core import (
        build_problem, lasso_cost, sample_gaussian_dictionary, sample_codes, adversarial_fourier_dictionary
    )
    from matrix_io import load_matrix, save_matrix, load_dataset, save_dataset, load_model, save_model
    from report_generator import ReportGenerator
    from solvers import ista, fista, reference_solution, fixed_point_residual
    from training import train, mean_cost_gap
    from networks import forward


LOGGER_NAME = "sparse_lab"
LOG_LEVEL_ENV = "SPARSE_LAB_LOG_LEVEL"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def setup_logging(verbose: bool = False, log_dir: Optional[str] = None) -> logging.Logger:
    """
    Configure console (and optional file) logging for every module.

    Level: DEBUG with --verbose, else SPARSE_LAB_LOG_LEVEL, else INFO.
    """
    level_name = "DEBUG" if verbose else os.getenv(LOG_LEVEL_ENV, "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)

    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()

    detailed_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
    )
    simple_formatter = logging.Formatter(
        '%(asctime)s - %(levelname)s - %(message)s'
    )

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(simple_formatter)
    root.addHandler(console_handler)

    if log_dir:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(log_dir, f"{LOGGER_NAME}.log"), encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(detailed_formatter)
        root.addHandler(file_handler)

    # openpyxl is chatty at DEBUG
    logging.getLogger("openpyxl").setLevel(logging.WARNING)
    return logging.getLogger(LOGGER_NAME)


class SparseLab:
    """Runs one experiment end to end and writes its outputs."""

    def __init__(self, config: ExperimentConfig, logger: Optional[logging.Logger] = None):
        self.config = config
        self.logger = logger or logging.getLogger(LOGGER_NAME)
        self.report_generator = ReportGenerator(config.output_dir)
        self.error_handler = ErrorHandler(max_retries=3, base_delay=0.1)

    def run(self) -> int:
        """
        Run the configured experiment.

        Returns:
            int: exit code
        """
        self.logger.info("=" * 60)
        self.logger.info(f"Sparse Splitting Lab - {self.config.experiment} (seed {self.config.seed})")
        self.logger.info("=" * 60)
        success = False
        try:
            self.report_generator.write_resolved_config(config_to_dict(self.config))
            if self.config.experiment == "fig_gap":
                success = self.run_gap()
            elif self.config.experiment == "mc_verify":
                success = self.run_mc()
            else:
                success = self.run_layers()
            return EXIT_OK if success else EXIT_RUNTIME
        finally:
            self.log_final_summary(success)

    def run_layers(self) -> bool:
        artifacts = ExperimentArtifacts()
        table = run_layer_experiment(self.config, artifacts, self.error_handler)
        self.report_generator.write_result_table(table)
        self.report_generator.write_artifacts(artifacts)
        self.report_generator.write_workbook(table)
        self._log_ratios(table)
        return True

    def run_gap(self) -> bool:
        table = run_fig_gap(self.config)
        self.report_generator.write_gap_table(table)
        for kind in ("gaussian", "fourier_adversarial"):
            summary = table.summary[kind]
            self.logger.info(f"{kind}: initial margin {summary['initial_margin']:.4f} "
                             f"(realized {summary['initial_realized_margin']:.4f}), "
                             f"monotone fraction {summary['monotone_fraction']:.2f}")
        return True

    def run_mc(self) -> bool:
        reports = run_mc_verify(self.config)
        self.report_generator.write_mc_reports(reports)
        failed = [r.name for r in reports if not r.within_tolerance]
        if failed:
            self.logger.error(f"Verification failed for: {', '.join(failed)}")
        return not failed

    def _log_ratios(self, table: ResultTable) -> None:
        for setting, pairs in sorted(table.summary.get("ratios", {}).items()):
            for pair, per_depth in sorted(pairs.items()):
                values = ", ".join(f"K={k}: {v:.3f}" for k, v in per_depth.items())
                self.logger.info(f"[{setting}] {pair}: {values}")

    def log_final_summary(self, success: bool) -> None:
        """
        Log final summary including error statistics.

        Args:
            success: Whether the run was successful
        """
        error_summary = self.error_handler.get_error_summary()

        self.logger.info("=" * 60)
        self.logger.info("RUN SUMMARY")
        self.logger.info("=" * 60)
        self.logger.info(f"Overall Status: {'SUCCESS' if success else 'FAILED'}")
        self.logger.info(f"Outputs: {self.config.output_dir}")
        self.logger.info(f"Total Errors: {error_summary.get('total_errors', 0)}")

        if error_summary.get('last_errors'):
            self.logger.info("Recent Errors:")
            for context, error_info in error_summary['last_errors'].items():
                self.logger.info(f"  - {context}: {error_info.get('error_type', 'Unknown')} - "
                                 f"{error_info.get('error_message', 'No message')}")

        self.logger.info("=" * 60)


class UsageError(Exception):
    """Bad flags detected after parsing."""


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so cli_dispatch owns the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", help="Directory for outputs (env SPARSE_LAB_OUTPUT_DIR)")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    common.add_argument("--log-file", action="store_true", help="Also log to <output-dir>/logs/sparse_lab.log")
    return common


def _problem_options() -> argparse.ArgumentParser:
    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument("--n", type=int, help="Signal dimension")
    problem.add_argument("--m", type=int, help="Number of atoms")
    problem.add_argument("--rho", type=float, help="Activation probability of the codes")
    problem.add_argument("--sigma", type=float, help="Amplitude scale of the codes")
    problem.add_argument("--lambda", dest="lam", type=float, help="Regularization weight")
    return problem


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparse-lab", description="Sparse Splitting Lab - factorized proximal splitting experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    common, problem = _common_options(), _problem_options()

    p = sub.add_parser("gen-dict", parents=[common, problem], help="Generate a dictionary matrix file")
    p.add_argument("--kind", choices=["gaussian", "fourier_adversarial"], default="gaussian")
    p.add_argument("--out", help="Output matrix file (default <output-dir>/D.csv)")

    p = sub.add_parser("gen-data", parents=[common, problem], help="Generate a Bernoulli-Gaussian dataset bundle")
    p.add_argument("--dict", help="Dictionary matrix file (Gaussian dictionary generated when omitted)")
    p.add_argument("--count", type=int, default=1000, help="Number of samples")

    p = sub.add_parser("solve", parents=[common], help="Run a classic solver on a signal file")
    p.add_argument("--dict", required=True, help="Dictionary matrix file")
    p.add_argument("--data", required=True, help="Signals: matrix file (samples as columns) or dataset directory")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--method", choices=["ista", "fista", "fista-restart", "reference"], default="fista")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-12, help="Residual tolerance of the reference solver")
    p.add_argument("--bounds", action="store_true",
                   help="Also write bounds.json: factorized-step bounds for the first signal")

    p = sub.add_parser("train", parents=[common, problem], help="Train one unrolled network")
    p.add_argument("--kind", choices=list(NETWORK_KINDS), required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--dict", help="Dictionary matrix file (Gaussian dictionary generated when omitted)")
    p.add_argument("--config", help="Experiment config JSON for the training section")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--greedy", action="store_true", help="Greedy layer-wise training")

    p = sub.add_parser("eval", parents=[common], help="Evaluate serialized models on a dataset")
    p.add_argument("--model", required=True, nargs="+", help="Model directories")
    p.add_argument("--data", required=True, help="Dataset directory")
    p.add_argument("--tol", type=float, default=1e-12)

    p = sub.add_parser("gap", parents=[common], help="Gap condition along ISTA for one signal")
    p.add_argument("--dict", required=True)
    p.add_argument("--data", required=True, help="Signal matrix file or dataset directory (first sample)")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--realized", action="store_true", help="Use the dictionary's realized gap constant")

    for name, experiment, text in (
        ("mc-verify", "mc_verify", "Monte-Carlo verification suite"),
        ("fig-layers", "fig_layers", "Depth curves on a Gaussian (or --dict) dictionary"),
        ("fig-adverse", "fig_adverse", "Depth curves on the adversarial Fourier dictionary"),
        ("fig-gap", "fig_gap", "Gap-condition traces, Gaussian vs adversarial"),
    ):
        p = sub.add_parser(name, parents=[common, problem], help=text)
        p.set_defaults(experiment=experiment)
        p.add_argument("--config", help="Experiment config JSON")
        p.add_argument("--depths", type=int, nargs="+")
        p.add_argument("--steps", type=int, help="Training steps per network")
        p.add_argument("--test-size", type=int)
        if name == "fig-layers":
            p.add_argument("--dict", help="User-supplied dictionary (runs the custom experiment)")
    return parser


def _resolve_config(args, experiment: str) -> ExperimentConfig:
    """Defaults < env < config file < flags."""
    manager = ConfigManager()
    config_path = getattr(args, "config", None)
    if config_path:
        config = manager.load_experiment_config(config_path)
        if config.experiment != experiment:
            config = replace(config, experiment=experiment)
    else:
        config = manager.create_default_config(experiment)

    overrides = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "n": getattr(args, "n", None),
        "m": getattr(args, "m", None),
        "rho": getattr(args, "rho", None),
        "sigma": getattr(args, "sigma", None),
        "lam": getattr(args, "lam", None),
        "depths": getattr(args, "depths", None),
        "test_size": getattr(args, "test_size", None),
        "train.steps": getattr(args, "steps", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.learning_rate": getattr(args, "learning_rate", None),
        "train.greedy": True if getattr(args, "greedy", False) else None,
    }
    if experiment == "custom":
        overrides["dict_path"] = args.dict
    return manager.apply_overrides(config, overrides)


def _load_dictionary(path: str) -> Dictionary:
    raw = load_matrix(path)
    norms = np.linalg.norm(raw, axis=0)
    if np.max(np.abs(norms - 1.0)) > 1e-12:
        logging.getLogger(LOGGER_NAME).warning(f"normalizing the columns of {path}")
    return Dictionary.from_matrix(raw, kind="user_supplied")


def _load_signals(path: str, n: int) -> np.ndarray:
    """Signals one per row, from a dataset directory or a matrix file with samples as columns."""
    if Path(path).is_dir():
        return load_dataset(path)["X"]
    matrix = load_matrix(path)
    if matrix.shape[0] == n:
        return matrix.T
    if matrix.shape[0] == 1 and matrix.shape[1] == n:
        return matrix
    raise InvalidArgumentError(f"{path} holds a {matrix.shape} matrix, expected {n} rows")


def _output_dir(args) -> Path:
    directory = Path(args.output_dir or os.getenv("SPARSE_LAB_OUTPUT_DIR", "results"))
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def cmd_gen_dict(args, logger: logging.Logger) -> int:
    config = _resolve_config(args, "fig_adverse" if args.kind == "fourier_adversarial" else "fig_layers")
    if args.kind == "gaussian":
        dictionary = sample_gaussian_dictionary(config.n, config.m, config.seed)
    else:
        dictionary = adversarial_fourier_dictionary(config.n, config.m, config.seed)
    out = Path(args.out) if args.out else _output_dir(args) / "D.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(out, dictionary.entries)
    logger.info(f"Wrote {args.kind} dictionary ({config.n} x {config.m}) to {out}")
    return EXIT_OK


def cmd_gen_data(args, logger: logging.Logger) -> int:
    config = _resolve_config(args, "fig_layers")
    if args.dict:
        dictionary = _load_dictionary(args.dict)
    else:
        dictionary = sample_gaussian_dictionary(config.n, config.m, config.seed)
    model = BernoulliGaussianModel(rho=config.rho, sigma=config.sigma, m=dictionary.m)
    Z, X = sample_codes(model, args.count, config.seed + 1, dictionary)
    save_dataset(_output_dir(args), dictionary, X,
                 {"rho": config.rho, "sigma": config.sigma, "lambda": config.lam, "seed": config.seed},
                 Z_true=Z)
    return EXIT_OK


def cmd_solve(args, logger: logging.Logger) -> int:
    dictionary = _load_dictionary(args.dict)
    X = _load_signals(args.data, dictionary.n)
    problem = build_problem(dictionary, X, args.lam)
    reports = ReportGenerator(str(_output_dir(args)))
    z_star = reference_solution(problem, tol=args.tol)

    if args.bounds:
        single = build_problem(dictionary, X[0], args.lam)
        path = reports.write_bound_reports(bound_suite(single, z_star[0], max(args.iters, 1)))
        logger.info(f"Wrote bound reports for the first signal to {path}")

    if args.method == "reference":
        z = z_star
        logger.info(f"Reference solution: mean cost {float(np.mean(lasso_cost(problem, z))):.6e}, "
                    f"residual {fixed_point_residual(problem, z):.2e}")
    else:
        if args.method == "ista":
            trace = ista(problem, None, args.iters)
        else:
            trace = fista(problem, None, args.iters, restart=args.method == "fista-restart")
        reports.write_trace(trace, "trace.csv", f_star=lasso_cost(problem, z_star))
        z = trace.final
        logger.info(f"{args.method}: mean cost {trace.costs[0]:.6e} -> {trace.costs[-1]:.6e} "
                    f"in {trace.iterations} iterations ({trace.wall_time:.2f}s)")
    save_matrix(Path(reports.output_dir) / "codes.csv", np.atleast_2d(z).T)
    return EXIT_OK


def cmd_train(args, logger: logging.Logger) -> int:
    config = _resolve_config(args, "fig_layers")
    if args.dict:
        dictionary = _load_dictionary(args.dict)
    else:
        dictionary = sample_gaussian_dictionary(config.n, config.m, config.seed)
    model = BernoulliGaussianModel(rho=config.rho, sigma=config.sigma, m=dictionary.m)
    _, X_test = sample_codes(model, config.test_size, config.seed + 1, dictionary)
    problem = build_problem(dictionary, X_test, config.lam)
    f_star = lasso_cost(problem, reference_solution(problem, tol=config.reference_tol))

    params, curve = train(args.kind, model, dictionary, config.lam, config.train, args.depth, X_test, f_star)
    output_dir = _output_dir(args)
    save_model(output_dir / "model", params, extra={"cell": f"{args.kind}_K{args.depth}"})
    reports = ReportGenerator(str(output_dir))
    reports.write_resolved_config(config_to_dict(config))
    artifacts = ExperimentArtifacts(curves={f"{args.kind}_K{args.depth}": curve})
    reports.write_artifacts(artifacts)
    mean, se = mean_cost_gap(forward(params, X_test, dictionary.entries).output,
                             X_test, dictionary.entries, config.lam, f_star)
    logger.info(f"{args.kind} with {args.depth} layers: test cost gap {mean:.4e} +- {se:.1e}")
    return EXIT_OK


def cmd_eval(args, logger: logging.Logger) -> int:
    bundle = load_dataset(args.data)
    dictionary, X = bundle["dictionary"], bundle["X"]
    table = ResultTable()
    by_lambda: Dict[float, np.ndarray] = {}
    for model_dir in args.model:
        params = load_model(model_dir)
        if params.lam not in by_lambda:
            problem = build_problem(dictionary, X, params.lam)
            by_lambda[params.lam] = lasso_cost(problem, reference_solution(problem, tol=args.tol))
        out = forward(params, X, dictionary.entries).output
        mean, se = mean_cost_gap(out, X, dictionary.entries, params.lam, by_lambda[params.lam])
        table.add(ResultRow(setting=str(model_dir), method=params.kind, depth=params.depth,
                            mean_cost_gap=mean, std_error=se, n_samples=X.shape[0]))
        logger.info(f"{model_dir}: {params.kind} K={params.depth} gap {mean:.4e}")
    ReportGenerator(str(_output_dir(args))).write_result_table(table, "eval.csv")
    return EXIT_OK


def cmd_gap(args, logger: logging.Logger) -> int:
    dictionary = _load_dictionary(args.dict)
    x = _load_signals(args.data, dictionary.n)[0]
    problem = build_problem(dictionary, x, args.lam)
    trace = gap_trace(problem, args.iters, realized=args.realized)
    ReportGenerator(str(_output_dir(args))).write_gap_estimates(trace)
    first_failure = next((k for k, g in enumerate(trace) if not g.holds), None)
    logger.info(f"Gap condition holds up to iteration "
                f"{args.iters if first_failure is None else first_failure - 1}")
    return EXIT_OK


def cmd_experiment(args, logger: logging.Logger) -> int:
    experiment = args.experiment
    if experiment == "fig_layers" and getattr(args, "dict", None):
        experiment = "custom"
    config = _resolve_config(args, experiment)
    return SparseLab(config, logger).run()


COMMANDS: Dict[str, Callable] = {
    "gen-dict": cmd_gen_dict,
    "gen-data": cmd_gen_data,
    "solve": cmd_solve,
    "train": cmd_train,
    "eval": cmd_eval,
    "gap": cmd_gap,
    "mc-verify": cmd_experiment,
    "fig-layers": cmd_experiment,
    "fig-adverse": cmd_experiment,
    "fig-gap": cmd_experiment,
}


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv, run the subcommand and map failures to exit codes.

    Returns:
        int: 0 success, 1 runtime error, 2 usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"sparse-lab: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    log_dir = None
    if args.log_file:
        log_dir = str(Path(args.output_dir or os.getenv("SPARSE_LAB_OUTPUT_DIR", "results")) / "logs")
    logger = setup_logging(args.verbose, log_dir)
    context = create_error_context(args.command)

    try:
        return COMMANDS[args.command](args, logger)
    except ConfigurationError as e:
        logger.error(f"{context}: {e}")
        return EXIT_USAGE
    except (SparseLabError, OSError) as e:
        logger.error(f"{context}: {type(e).__name__}: {e}")
        logger.debug(traceback.format_exc())
        return EXIT_RUNTIME


def main():
    """Main entry point for the Sparse Splitting Lab."""
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
