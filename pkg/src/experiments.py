"""
Experiment pipelines: depth curves of learned and classic solvers on Gaussian,
adversarial and user-supplied dictionaries, gap-condition traces and the
Monte-Carlo verification suite.

Every pipeline is fully determined by its ExperimentConfig; sub-seeds are
derived from config.seed by fixed offsets.
"""
import logging
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

try:
    from .error_handler import ErrorHandler, create_error_context
    from .exceptions import TrainingError, InvalidArgumentError, ConfigurationError
    from .factorization import (
        make_factorization, identity_factorization, dataset_factorization_objective
    )
    from .generic_gap import (
        gap_trace, margins_monotone_to_failure, mc_wishart_frobenius, mc_chi_moment,
        mc_lemma1, mc_lemma2, mc_unitarity
    )
    from .lasso_core import (
        build_problem, lasso_cost, sample_gaussian_dictionary, sample_codes, adversarial_fourier_dictionary
    )
    from .matrix_io import load_matrix
    from .models import (
        BernoulliGaussianModel, Dictionary, ExperimentConfig, ExperimentArtifacts, GapTraceTable,
        MCReport, NetworkParams, ResultRow, ResultTable, NETWORK_KINDS
    )
    from .networks import init_network, forward
    from .solvers import reference_solution, train_linear_baseline, ista
    from .training import train, evaluate_depth_curve, classic_depth_curve, mean_cost_gap
except ImportError:
    from error_handler import ErrorHandler, create_error_context
    from exceptions import TrainingError, InvalidArgumentError, ConfigurationError
    from factorization import (
        make_factorization, identity_factorization, dataset_factorization_objective
    )
    from generic_gap import (
        gap_trace, margins_monotone_to_failure, mc_wishart_frobenius, mc_chi_moment,
        mc_lemma1, mc_lemma2, mc_unitarity
    )
    from lasso_core import (
        build_problem, lasso_cost, sample_gaussian_dictionary, sample_codes, adversarial_fourier_dictionary
    )
    from matrix_io import load_matrix
    from models import (
        BernoulliGaussianModel, Dictionary, ExperimentConfig, ExperimentArtifacts, GapTraceTable,
        MCReport, NetworkParams, ResultRow, ResultTable, NETWORK_KINDS
    )
    from networks import init_network, forward
    from solvers import reference_solution, train_linear_baseline, ista
    from training import train, evaluate_depth_curve, classic_depth_curve, mean_cost_gap


logger = logging.getLogger(__name__)

CLASSIC_METHODS = ("ista", "fista", "linear")
# learned method -> classic method it unrolls
COUNTERPARTS = {"lista": "ista", "lfista": "fista", "facnet": "ista"}

TEST_SEED_OFFSET = 1
BASELINE_SEED_OFFSET = 2
TRAIN_SEED_OFFSET = 1000


def _setting_name(kind: str, rho: float) -> str:
    return f"{kind}_rho={rho:g}"


def _train_seed(config: ExperimentConfig, kind: str, depth: int) -> int:
    return config.train.seed + TRAIN_SEED_OFFSET * (NETWORK_KINDS.index(kind) + 1) + depth


def run_depth_comparison(config: ExperimentConfig, dictionary: Dictionary, rho: float, setting: str,
                         table: ResultTable, artifacts: Optional[ExperimentArtifacts] = None,
                         error_handler: Optional[ErrorHandler] = None,
                         methods=CLASSIC_METHODS + NETWORK_KINDS) -> None:
    """
    Fill `table` with the depth curves of every method on one dictionary and
    one sparsity level.

    A diverging network is recorded with status "diverged" at its classical
    initialization and the run continues.
    """
    error_handler = error_handler or ErrorHandler()
    depths = sorted(config.depths)
    model = BernoulliGaussianModel(rho=rho, sigma=config.sigma, m=dictionary.m)
    _, X_test = sample_codes(model, config.test_size, config.seed + TEST_SEED_OFFSET, dictionary)
    problem = build_problem(dictionary, X_test, config.lam)
    z_star = reference_solution(problem, tol=config.reference_tol)
    f_star = lasso_cost(problem, z_star)
    logger.info(f"[{setting}] reference solutions ready for {config.test_size} test signals")

    for method in methods:
        if method not in CLASSIC_METHODS:
            continue
        baseline = None
        if method == "linear":
            _, X_train = sample_codes(model, config.test_size, config.seed + BASELINE_SEED_OFFSET, dictionary)
            baseline = train_linear_baseline(X_train, dictionary, config.lam, config.baseline)
            if artifacts is not None:
                artifacts.baselines[setting] = baseline
        for row in classic_depth_curve(problem, depths, f_star, method, baseline, setting=setting):
            table.add(row)

    trained_by_kind: Dict[str, Dict[int, NetworkParams]] = {}
    for kind in methods:
        if kind not in NETWORK_KINDS:
            continue
        trained = trained_by_kind.setdefault(kind, {})
        for depth in depths:
            context = create_error_context("train", experiment=config.experiment,
                                           seed=_train_seed(config, kind, depth),
                                           additional_info={"setting": setting, "kind": kind, "depth": depth})
            train_config = replace(config.train, seed=_train_seed(config, kind, depth))
            try:
                params, curve = train(kind, model, dictionary, config.lam, train_config, depth, X_test, f_star)
                trained[depth] = params
                if artifacts is not None:
                    artifacts.models[f"{setting}/{kind}_K{depth}"] = params
                    artifacts.curves[f"{setting}/{kind}_K{depth}"] = curve
            except TrainingError as e:
                error_handler.handle_error(e, context)
                params = init_network(kind, dictionary, config.lam, depth, mu=config.train.mu)
                mean, se = mean_cost_gap(forward(params, X_test, dictionary.entries).output,
                                         X_test, dictionary.entries, config.lam, f_star)
                table.add(ResultRow(setting=setting, method=kind, depth=depth, mean_cost_gap=mean,
                                    std_error=se, n_samples=config.test_size, status="diverged"))
        for row in evaluate_depth_curve(trained, X_test, f_star, dictionary, kind, setting=setting):
            table.add(row)
        logger.info(f"[{setting}] {kind}: trained {len(trained)}/{len(depths)} depths")

    table.summary.setdefault("ratios", {})[setting] = _gap_ratios(table, setting, depths)
    objective = _facnet_dataset_objective(trained_by_kind.get("facnet", {}).get(1), problem, z_star)
    if objective is not None:
        table.summary.setdefault("facnet_dataset_objective", {})[setting] = objective


def _gap_ratios(table: ResultTable, setting: str, depths: List[int]) -> Dict[str, Dict[str, float]]:
    """learned gap / classic gap per depth, for every learned method present."""
    ratios: Dict[str, Dict[str, float]] = {}
    for learned, classic in COUNTERPARTS.items():
        per_depth = {}
        for depth in depths:
            try:
                denominator = table.gap(classic, depth, setting)
                numerator = table.gap(learned, depth, setting)
            except KeyError:
                continue
            if denominator > 0:
                per_depth[str(depth)] = numerator / denominator
        if per_depth:
            ratios[f"{learned}/{classic}"] = per_depth
    return ratios


def _facnet_dataset_objective(params, problem, z_star) -> Optional[Dict[str, float]]:
    """Dataset objective of the first trained FacNet layer next to the identity factorization's."""
    if params is None or params.depth != 1:
        return None
    layer = params.layers[0]
    Z0 = np.zeros_like(z_star)
    learned = make_factorization(layer.A, layer.S, problem.B)
    Z1_learned = forward(params, problem.x, problem.D).output
    identity = identity_factorization(problem)
    Z1_identity = ista(problem, None, 1).final
    return {
        "learned": dataset_factorization_objective(learned, Z0, Z1_learned, z_star, problem.B, problem.lam),
        "identity": dataset_factorization_objective(identity, Z0, Z1_identity, z_star, problem.B, problem.lam),
        "learned_psd_margin": learned.psd_margin,
    }


def run_fig_layers(config: ExperimentConfig, artifacts: Optional[ExperimentArtifacts] = None,
                   error_handler: Optional[ErrorHandler] = None) -> ResultTable:
    """Gaussian dictionary, every sparsity level in config.layer_rhos."""
    dictionary = sample_gaussian_dictionary(config.n, config.m, config.seed)
    table = ResultTable()
    for rho in config.layer_rhos:
        run_depth_comparison(config, dictionary, rho, _setting_name("gaussian", rho),
                             table, artifacts, error_handler)
    return table


def run_fig_adverse(config: ExperimentConfig, artifacts: Optional[ExperimentArtifacts] = None,
                    error_handler: Optional[ErrorHandler] = None) -> ResultTable:
    """Same pipeline on the adversarial Fourier dictionary at config.rho."""
    dictionary = adversarial_fourier_dictionary(config.n, config.m, config.seed)
    table = ResultTable()
    run_depth_comparison(config, dictionary, config.rho, _setting_name("fourier_adversarial", config.rho),
                         table, artifacts, error_handler)
    return table


def run_custom(config: ExperimentConfig, artifacts: Optional[ExperimentArtifacts] = None,
               error_handler: Optional[ErrorHandler] = None) -> ResultTable:
    """Same pipeline on a dictionary read from config.dict_path (columns normalized)."""
    if not config.dict_path:
        raise ConfigurationError("the custom experiment needs dict_path")
    dictionary = Dictionary.from_matrix(load_matrix(config.dict_path), kind="user_supplied")
    if dictionary.n != config.n or dictionary.m != config.m:
        logger.info(f"using dictionary dimensions n={dictionary.n}, m={dictionary.m} from {config.dict_path}")
        config = replace(config, n=dictionary.n, m=dictionary.m)
    table = ResultTable()
    run_depth_comparison(config, dictionary, config.rho, _setting_name("user_supplied", config.rho),
                         table, artifacts, error_handler)
    return table


def run_fig_gap(config: ExperimentConfig) -> GapTraceTable:
    """
    Gap-condition margins along ISTA, averaged over config.gap.n_seeds small
    problems per dictionary kind.

    Both kinds see the same codes. Each row carries the margin with the
    generic constant sqrt(K(K-1)/p) and with the dictionary's realized one.
    """
    gap = config.gap
    model = BernoulliGaussianModel(rho=config.rho, sigma=config.sigma, m=gap.m)
    builders = {
        "gaussian": sample_gaussian_dictionary,
        "fourier_adversarial": adversarial_fourier_dictionary,
    }
    result = GapTraceTable()
    for kind, build in builders.items():
        margins = np.empty((gap.n_seeds, gap.iterations + 1))
        realized = np.empty_like(margins)
        holds = np.empty_like(margins)
        monotone = 0
        for s in range(gap.n_seeds):
            seed = config.seed + s
            dictionary = build(gap.n, gap.m, seed)
            _, x = sample_codes(model, 1, seed + TEST_SEED_OFFSET, dictionary)
            problem = build_problem(dictionary, x[0], config.lam)
            z_star = reference_solution(problem, tol=config.reference_tol)
            generic = gap_trace(problem, gap.iterations, z_star)
            dictionary_trace = gap_trace(problem, gap.iterations, z_star, realized=True)
            margins[s] = [g.margin for g in generic]
            realized[s] = [g.margin for g in dictionary_trace]
            holds[s] = [g.holds for g in generic]
            monotone += margins_monotone_to_failure(generic)

        se = margins.std(axis=0, ddof=1) / np.sqrt(gap.n_seeds) if gap.n_seeds > 1 else np.zeros(gap.iterations + 1)
        for k in range(gap.iterations + 1):
            result.rows.append({
                "dictionary": kind,
                "iteration": k,
                "mean_margin": float(margins[:, k].mean()),
                "std_error": float(se[k]),
                "mean_realized_margin": float(realized[:, k].mean()),
                "fraction_holds": float(holds[:, k].mean()),
                "n_problems": gap.n_seeds,
            })
        result.summary[kind] = {
            "initial_margin": float(margins[:, 0].mean()),
            "initial_realized_margin": float(realized[:, 0].mean()),
            "monotone_fraction": monotone / gap.n_seeds,
        }
        logger.info(f"[gap] {kind}: initial margin {margins[:, 0].mean():.4f}, "
                    f"monotone in {monotone}/{gap.n_seeds} runs")
    result.summary["gaussian_above_adversarial"] = bool(
        result.summary["gaussian"]["initial_realized_margin"]
        > result.summary["fourier_adversarial"]["initial_realized_margin"]
    )
    return result


def run_mc_verify(config: ExperimentConfig) -> List[MCReport]:
    """Moment identities, first-order gains and near-unitarity at the configured sizes."""
    mc = config.mc
    seed = config.seed
    reports = [mc_wishart_frobenius(mc.wishart_K, mc.wishart_p, mc.wishart_trials, seed)]
    for K, p in mc.chi_sizes:
        reports.append(mc_chi_moment(K, p, mc.chi_trials, seed))
    reports.append(mc_lemma1(mc.lemma1_K, mc.lemma1_p, mc.lemma1_deltas, mc.lemma1_trials, seed))
    for delta in mc.lemma2_deltas:
        reports.append(mc_lemma2(mc.lemma2_K, delta, mc.lemma2_trials, seed))
    reports.append(mc_unitarity(mc.unitarity_K, mc.unitarity_delta, mc.unitarity_draws, seed))

    for report in reports:
        status = "ok" if report.within_tolerance else "FAILED"
        logger.info(f"[mc] {report.name} {report.params}: estimate {report.estimate:.6g} "
                    f"+- {report.std_error:.2g} vs {report.reference:.6g} ({status})")
    return reports


LAYER_PIPELINES = {
    "fig_layers": run_fig_layers,
    "fig_adverse": run_fig_adverse,
    "custom": run_custom,
}


def run_layer_experiment(config: ExperimentConfig, artifacts: Optional[ExperimentArtifacts] = None,
                         error_handler: Optional[ErrorHandler] = None) -> ResultTable:
    """Dispatch to the depth-curve pipeline named by config.experiment."""
    pipeline = LAYER_PIPELINES.get(config.experiment)
    if pipeline is None:
        raise InvalidArgumentError(f"{config.experiment} is not a depth-curve experiment")
    return pipeline(config, artifacts, error_handler)
