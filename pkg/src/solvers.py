"""
Classic first-order LASSO solvers: ISTA, FISTA (with optional function-value
restart), high-accuracy reference solutions and the linear warm-start baseline.

Every solver accepts one problem or a batch (one signal per row); traces of a
batch hold the mean cost and mean support size over rows.
"""
import logging
import time
from typing import List, Optional, Tuple

import numpy as np

try:
    from .exceptions import ConvergenceError, TrainingError, InvalidArgumentError
    from .lasso_core import soft_threshold, lasso_cost
    from .models import LassoProblem, SolverTrace, LinearBaseline, BaselineConfig, Dictionary
except ImportError:
    from exceptions import ConvergenceError, TrainingError, InvalidArgumentError
    from lasso_core import soft_threshold, lasso_cost
    from models import LassoProblem, SolverTrace, LinearBaseline, BaselineConfig, Dictionary


logger = logging.getLogger(__name__)

MAX_REFERENCE_ITERATIONS = 10 ** 6


def smooth_gradient(p: LassoProblem, z: np.ndarray) -> np.ndarray:
    """Gradient of E(z) = 1/2 ||x - Dz||^2, i.e. Bz - D^T x."""
    return z @ p.B - p.dtx


def ista_step(p: LassoProblem, z: np.ndarray) -> np.ndarray:
    """z <- h_{lam/L}(z - (Bz - D^T x) / L)."""
    return soft_threshold(z - smooth_gradient(p, z) / p.L, p.lam / p.L)


def fixed_point_residual(p: LassoProblem, z: np.ndarray) -> float:
    """||z - h_{lam/L}(z - grad/L)||_2, the worst row for a batch."""
    diff = z - ista_step(p, z)
    return float(np.max(np.linalg.norm(np.atleast_2d(diff), axis=1)))


def _mean_cost(p: LassoProblem, z: np.ndarray) -> float:
    return float(np.mean(lasso_cost(p, z)))


def _mean_support(z: np.ndarray) -> float:
    return float(np.mean(np.count_nonzero(np.atleast_2d(z), axis=1)))


def _initial_code(p: LassoProblem, z0: Optional[np.ndarray]) -> np.ndarray:
    if z0 is None:
        shape = (p.x.shape[0], p.m) if p.batched else (p.m,)
        return np.zeros(shape)
    return np.array(z0, dtype=np.float64, copy=True)


def ista(p: LassoProblem, z0: Optional[np.ndarray], K: int, record_iterates: bool = False) -> SolverTrace:
    """
    Run K ISTA iterations with step 1/L from z0 (zeros when None).

    Returns:
        SolverTrace with K + 1 costs
    """
    if K < 0:
        raise InvalidArgumentError(f"iteration count must be non-negative, got {K}")
    start = time.perf_counter()
    z = _initial_code(p, z0)
    costs = [_mean_cost(p, z)]
    supports = [_mean_support(z)]
    iterates = [z.copy()] if record_iterates else None

    for _ in range(K):
        z = ista_step(p, z)
        costs.append(_mean_cost(p, z))
        supports.append(_mean_support(z))
        if record_iterates:
            iterates.append(z.copy())

    return SolverTrace(method="ista", costs=costs, support_sizes=supports, final=z,
                       iterates=iterates, wall_time=time.perf_counter() - start)


def fista_momentum_weights(K: int) -> List[float]:
    """
    Momentum weights w_k = (t_{k-1} - 1) / t_k applied before step k.

    t_0 = 1, t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2, and w_0 = 0 (no memory before the first step).
    """
    weights = []
    t_prev, t = 1.0, 1.0
    for k in range(K):
        weights.append(0.0 if k == 0 else (t_prev - 1.0) / t)
        t_prev, t = t, (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
    return weights


def fista(p: LassoProblem, z0: Optional[np.ndarray], K: int, record_iterates: bool = False,
          restart: bool = False) -> SolverTrace:
    """
    Run K FISTA iterations.

    y_k = z_k + w_k (z_k - z_{k-1}), z_{k+1} = h_{lam/L}(y_k - grad(y_k)/L).
    With restart, the momentum of a row is reset whenever its cost increases.
    """
    if K < 0:
        raise InvalidArgumentError(f"iteration count must be non-negative, got {K}")
    start = time.perf_counter()
    z = _initial_code(p, z0)
    z_prev = z.copy()
    costs = [_mean_cost(p, z)]
    supports = [_mean_support(z)]
    iterates = [z.copy()] if record_iterates else None

    if not restart:
        for w in fista_momentum_weights(K):
            y = z + w * (z - z_prev)
            z_prev, z = z, ista_step(p, y)
            costs.append(_mean_cost(p, z))
            supports.append(_mean_support(z))
            if record_iterates:
                iterates.append(z.copy())
    else:
        rows = (z.shape[0], 1) if z.ndim == 2 else ()
        t_prev, t = np.ones(rows), np.ones(rows)
        first = np.ones(rows, dtype=bool)
        row_costs = np.asarray(lasso_cost(p, z), dtype=np.float64).reshape(rows)
        for _ in range(K):
            w = np.where(first, 0.0, (t_prev - 1.0) / t)
            y = z + w * (z - z_prev)
            z_prev, z = z, ista_step(p, y)
            new_costs = np.asarray(lasso_cost(p, z), dtype=np.float64).reshape(rows)
            increased = new_costs > row_costs
            t_prev, t = t, (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            t_prev = np.where(increased, 1.0, t_prev)
            t = np.where(increased, 1.0, t)
            first = increased
            row_costs = new_costs
            costs.append(float(np.mean(new_costs)))
            supports.append(_mean_support(z))
            if record_iterates:
                iterates.append(z.copy())

    return SolverTrace(method="fista", costs=costs, support_sizes=supports, final=z,
                       iterates=iterates, wall_time=time.perf_counter() - start)


def reference_solution(p: LassoProblem, tol: float = 1e-12, max_iter: int = MAX_REFERENCE_ITERATIONS,
                       check_every: int = 20) -> np.ndarray:
    """
    High-accuracy z* from restarted FISTA, stopped on the fixed-point residual.

    Raises:
        ConvergenceError: residual still above tol after max_iter iterations
    """
    if tol <= 0:
        raise InvalidArgumentError(f"tolerance must be positive, got {tol}")
    z = _initial_code(p, None)
    residual = fixed_point_residual(p, z)
    done = 0
    while residual > tol and done < max_iter:
        chunk = min(check_every, max_iter - done)
        z = fista(p, z, chunk, restart=True).final
        done += chunk
        residual = fixed_point_residual(p, z)

    if residual > tol:
        raise ConvergenceError(
            f"reference solution did not converge in {done} iterations (residual {residual:.3e} > {tol:.1e})",
            residual=residual, iterations=done
        )
    logger.debug(f"reference solution reached residual {residual:.2e} after {done} iterations")
    return z


def linear_baseline_loss_and_grad(A0: np.ndarray, X: np.ndarray, D: np.ndarray,
                                  lam: float) -> Tuple[float, np.ndarray]:
    """
    Mean of 1/2 ||x - D A0 x||^2 + lam ||A0 x||_1 over the rows of X and its
    (sub)gradient in A0, with sign(0) = 0 at the kinks.
    """
    X = np.atleast_2d(X)
    Z = X @ A0.T
    residual = X - Z @ D.T
    loss = 0.5 * np.sum(residual * residual, axis=1) + lam * np.sum(np.abs(Z), axis=1)
    grad_z = -residual @ D + lam * np.sign(Z)
    grad = grad_z.T @ X / X.shape[0]
    return float(np.mean(loss)), grad


def train_linear_baseline(data: np.ndarray, d: Dictionary, lam: float,
                          config: Optional[BaselineConfig] = None, batch_size: int = 32) -> LinearBaseline:
    """
    Fit the warm-start layer z_out = A0 x by stochastic subgradient descent.

    The step is learning_rate / (L * mean ||x||^2), the inverse curvature scale
    of the smooth part.

    Raises:
        TrainingError: loss exceeds 1e6 times its initial value
    """
    config = config or BaselineConfig()
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    D = d.entries
    L = float(np.linalg.eigvalsh(D.T @ D)[-1])
    scale = L * float(np.mean(np.sum(X * X, axis=1)))
    step = config.learning_rate / scale if scale > 0 else 0.0

    rng = np.random.default_rng(config.seed)
    A0 = np.zeros((d.m, d.n))
    initial_loss, _ = linear_baseline_loss_and_grad(A0, X, D, lam)
    batch_size = min(batch_size, X.shape[0])

    for step_index in range(config.steps):
        batch = X[rng.integers(0, X.shape[0], size=batch_size)]
        loss, grad = linear_baseline_loss_and_grad(A0, batch, D, lam)
        if not np.isfinite(loss) or loss > 1e6 * max(initial_loss, 1e-300):
            raise TrainingError(f"linear baseline diverged at step {step_index} (loss {loss:.3e})",
                                step=step_index, loss=loss)
        A0 -= step * grad

    final_loss, _ = linear_baseline_loss_and_grad(A0, X, D, lam)
    logger.info(f"Linear baseline trained: loss {initial_loss:.4e} -> {final_loss:.4e} over {config.steps} steps")
    return LinearBaseline(A0=A0)


def warm_started_ista(p: LassoProblem, baseline: LinearBaseline, K: int,
                      record_iterates: bool = False) -> SolverTrace:
    """ISTA started from z0 = A0 x."""
    trace = ista(p, p.x @ baseline.A0.T, K, record_iterates=record_iterates)
    trace.method = "linear"
    return trace
