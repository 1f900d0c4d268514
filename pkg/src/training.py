"""
Training of unrolled networks: Adagrad updates, Stiefel projection of the
FacNet rotations, the training loop and depth-curve evaluation.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

try:
    from .exceptions import ProjectionError, TrainingError, InvalidArgumentError
    from .lasso_core import sample_codes
    from .models import (
        BernoulliGaussianModel, Dictionary, NetworkParams, ResultRow, TrainConfig, LassoProblem, LinearBaseline
    )
    from .networks import init_network, extend_network, backward, forward, batch_costs
    from .solvers import ista, fista, warm_started_ista
except ImportError:
    from exceptions import ProjectionError, TrainingError, InvalidArgumentError
    from lasso_core import sample_codes
    from models import (
        BernoulliGaussianModel, Dictionary, NetworkParams, ResultRow, TrainConfig, LassoProblem, LinearBaseline
    )
    from networks import init_network, extend_network, backward, forward, batch_costs
    from solvers import ista, fista, warm_started_ista


logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12
VALIDATION_SEED_OFFSET = 7919


@dataclass
class AdagradState:
    """Per-coordinate sums of squared gradients, keyed by (layer, parameter)."""
    accumulators: Dict[Tuple[int, str], np.ndarray] = field(default_factory=dict)


def adagrad_step(state: AdagradState, params: NetworkParams, grads: List[Dict[str, np.ndarray]],
                 lr: float, eps: float = 1e-8, lr_overrides: Optional[Dict[str, float]] = None) -> NetworkParams:
    """
    In-place update p <- p - lr g / (sqrt(G) + eps) after G <- G + g^2.

    Coordinates that never saw a gradient do not move; thresholds are clamped at 0.
    `lr_overrides` maps a parameter name to its own learning rate.
    """
    overrides = lr_overrides or {}
    for k, (layer, layer_grads) in enumerate(zip(params.layers, grads)):
        for name, g in layer_grads.items():
            key = (k, name)
            G = state.accumulators.get(key)
            if G is None:
                G = np.zeros_like(g)
            G = G + g * g
            state.accumulators[key] = G
            denom = np.sqrt(G) + eps
            step = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
            value = getattr(layer, name) - overrides.get(name, lr) * step
            if name == "theta":
                value = np.maximum(value, 0.0)
            setattr(layer, name, value)
    return params


def learning_rate_overrides(kind: str, m: int, config: TrainConfig) -> Dict[str, float]:
    """
    Per-parameter learning rates: the m x m FacNet rotations default to
    learning_rate / m, every other parameter uses learning_rate.
    """
    if kind != "facnet":
        return {}
    rate = config.rotation_learning_rate
    return {"A": config.learning_rate / m if rate is None else rate}


def stiefel_project(A: np.ndarray) -> np.ndarray:
    """
    Nearest orthogonal matrix: the polar factor U V^T of A = U Sigma V^T.

    Raises:
        ProjectionError: A is empty or (numerically) rank deficient
    """
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        raise ProjectionError(f"cannot project an empty {A.shape} matrix")
    U, sigma, Vt = np.linalg.svd(A)
    if sigma[-1] <= SINGULAR_TOL:
        raise ProjectionError(f"cannot project a rank-deficient matrix (smallest singular value {sigma[-1]:.2e})")
    return U @ Vt


def project_network(params: NetworkParams) -> NetworkParams:
    """Copy of FacNet parameters with every A replaced by its polar factor."""
    projected = params.copy()
    if projected.kind == "facnet":
        for layer in projected.layers:
            layer.A = stiefel_project(layer.A)
    return projected


def mean_cost_gap(Z: np.ndarray, X: np.ndarray, D: np.ndarray, lam: float,
                  f_star: np.ndarray) -> Tuple[float, float]:
    """Mean and standard error of F(z) - F(z*) over rows."""
    gaps = batch_costs(Z, X, D, lam) - f_star
    n = gaps.shape[0]
    se = float(np.std(gaps, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(gaps)), se


def _mean_cost(params: NetworkParams, X: np.ndarray, D: np.ndarray) -> float:
    out = forward(params, X, D).output
    return float(np.mean(batch_costs(out, X, D, params.lam)))


def _test_gap(params: NetworkParams, X: Optional[np.ndarray], D: np.ndarray,
              f_star: Optional[np.ndarray]) -> float:
    if X is None:
        return float("nan")
    out = forward(params, X, D).output
    costs = batch_costs(out, X, D, params.lam)
    return float(np.mean(costs - f_star)) if f_star is not None else float(np.mean(costs))


@dataclass
class _Monitor:
    """Signals scored at every checkpoint: validation picks, test is only reported."""
    D: np.ndarray
    validation_X: np.ndarray
    test_X: Optional[np.ndarray] = None
    test_f_star: Optional[np.ndarray] = None

    def score(self, params: NetworkParams) -> float:
        return _mean_cost(params, self.validation_X, self.D)

    def row(self, params: NetworkParams, step: int, train_loss: float, validation_cost: float) -> Dict[str, float]:
        return {"step": step, "depth": params.depth, "train_loss": train_loss,
                "validation_cost": validation_cost,
                "test_cost_gap": _test_gap(params, self.test_X, self.D, self.test_f_star)}


def validation_signals(generator: BernoulliGaussianModel, dictionary: Dictionary,
                       config: TrainConfig) -> np.ndarray:
    """Held-out signals for checkpoint selection, drawn apart from the training batches."""
    _, X = sample_codes(generator, config.validation_size, seed=config.seed + VALIDATION_SEED_OFFSET,
                        dictionary=dictionary)
    return X


def _fit(params: NetworkParams, generator: BernoulliGaussianModel, dictionary: Dictionary,
         config: TrainConfig, steps: int, rng: np.random.Generator, monitor: _Monitor,
         curve: List[Dict[str, float]], step_offset: int) -> NetworkParams:
    """Adagrad over fresh batches, returning the (projected) checkpoint with the lowest validation cost."""
    D = dictionary.entries
    state = AdagradState()
    overrides = learning_rate_overrides(params.kind, dictionary.m, config)

    best = project_network(params)
    best_score = monitor.score(best)
    initial_loss = None

    for step in range(1, steps + 1):
        _, X = sample_codes(generator, config.batch_size, seed=int(rng.integers(0, 2 ** 32)), dictionary=dictionary)
        value, grads = backward(params, X, D)
        if initial_loss is None:
            initial_loss = max(value, 1e-300)
        if not np.isfinite(value) or value > config.divergence_factor * initial_loss:
            raise TrainingError(f"{params.kind} training diverged at step {step_offset + step} (loss {value:.3e})",
                                step=step_offset + step, loss=value)
        adagrad_step(state, params, grads, config.learning_rate, config.adagrad_epsilon, overrides)

        if step % config.eval_every == 0 or step == steps:
            candidate = project_network(params)
            score = monitor.score(candidate)
            curve.append(monitor.row(candidate, step_offset + step, value, score))
            if score < best_score:
                best, best_score = candidate, score
            logger.debug(f"{params.kind} depth {params.depth} step {step_offset + step}: "
                         f"train {value:.4e}, validation {score:.4e}")
    return best


def train(kind: str, generator: BernoulliGaussianModel, dictionary: Dictionary, lam: float,
          config: TrainConfig, depth: int, test_X: Optional[np.ndarray] = None,
          test_f_star: Optional[np.ndarray] = None) -> Tuple[NetworkParams, List[Dict[str, float]]]:
    """
    Train a depth-K network from its classical initialization.

    The returned parameters are the checkpoint, the initialization included,
    with the lowest mean cost on config.validation_size signals drawn from
    the generator with seed config.seed + VALIDATION_SEED_OFFSET. The test
    signals only feed the curve. FacNet rotations are projected on the
    Stiefel manifold.

    Returns:
        (params, curve) with curve rows {step, depth, train_loss, validation_cost, test_cost_gap};
        test_cost_gap is nan without test signals
    """
    if generator.m != dictionary.m:
        raise InvalidArgumentError(f"generator has m={generator.m}, dictionary has m={dictionary.m}")
    rng = np.random.default_rng(config.seed)
    classical = init_network(kind, dictionary, lam, depth, mu=config.mu)
    monitor = _Monitor(D=dictionary.entries, validation_X=validation_signals(generator, dictionary, config),
                       test_X=test_X, test_f_star=test_f_star)
    curve = [monitor.row(classical, 0, float("nan"), monitor.score(classical))]
    if depth == 0 or config.steps == 0:
        return classical, curve

    if config.greedy and depth > 1:
        params = init_network(kind, dictionary, lam, 0, mu=config.mu)
        per_stage = max(1, config.steps // depth)
        for stage in range(depth):
            params = extend_network(params, dictionary)
            params = _fit(params, generator, dictionary, config, per_stage, rng,
                          monitor, curve, stage * per_stage)
        if monitor.score(classical) < monitor.score(params):
            params = classical
    else:
        params = _fit(classical.copy(), generator, dictionary, config, config.steps, rng, monitor, curve, 0)

    logger.info(f"Trained {kind} with {depth} layers over {config.steps} steps: "
                f"validation cost {monitor.score(params):.4e}")
    return params, curve


def evaluate_depth_curve(params_by_depth: Dict[int, NetworkParams], test_X: np.ndarray,
                         f_star: np.ndarray, dictionary: Dictionary, method: str,
                         setting: str = "") -> List[ResultRow]:
    """Mean F(z_K) - F(z*) of each trained network at its own depth."""
    rows = []
    D = dictionary.entries
    for depth in sorted(params_by_depth):
        params = params_by_depth[depth]
        out = forward(params, test_X, D).output
        mean, se = mean_cost_gap(out, test_X, D, params.lam, f_star)
        rows.append(ResultRow(setting=setting, method=method, depth=depth, mean_cost_gap=mean,
                              std_error=se, n_samples=test_X.shape[0]))
    return rows


def classic_depth_curve(p: LassoProblem, depths: List[int], f_star: np.ndarray, method: str,
                        baseline: Optional[LinearBaseline] = None, setting: str = "") -> List[ResultRow]:
    """
    Mean cost gap of ista / fista / linear (warm-started ISTA) after each
    iteration count in `depths`.
    """
    K = max(depths) if depths else 0
    if method == "ista":
        trace = ista(p, None, K, record_iterates=True)
    elif method == "fista":
        trace = fista(p, None, K, record_iterates=True)
    elif method == "linear":
        if baseline is None:
            raise InvalidArgumentError("the linear curve needs a trained baseline")
        trace = warm_started_ista(p, baseline, K, record_iterates=True)
    else:
        raise InvalidArgumentError(f"unknown solver: {method}")

    rows = []
    for depth in depths:
        mean, se = mean_cost_gap(trace.iterates[depth], p.x, p.D, p.lam, f_star)
        rows.append(ResultRow(setting=setting, method=method, depth=depth, mean_cost_gap=mean,
                              std_error=se, n_samples=p.x.shape[0]))
    return rows
