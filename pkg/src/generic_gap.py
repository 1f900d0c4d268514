"""
Near-identity factorizations of generic dictionaries.

E_delta matrices (columns within angle arcsin(delta) of the canonical
directions), greedy column choices, optimal diagonals, the gap condition
along ISTA iterates and the Monte-Carlo checks of the moment identities and
first-order gains for dictionaries with atoms uniform on the sphere.

Monte-Carlo trial t always uses the seed `seed + t`, so every estimate is
reproducible and independent of evaluation order.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

try:
    from .exceptions import InvalidArgumentError, DimensionMismatchError
    from .factorization import delta_A
    from .lasso_core import sample_gaussian_dictionary, sample_codes
    from .models import EDeltaMatrix, GapEstimate, MCReport, LassoProblem, BernoulliGaussianModel
    from .solvers import ista, reference_solution
except ImportError:
    from exceptions import InvalidArgumentError, DimensionMismatchError
    from factorization import delta_A
    from lasso_core import sample_gaussian_dictionary, sample_codes
    from models import EDeltaMatrix, GapEstimate, MCReport, LassoProblem, BernoulliGaussianModel
    from solvers import ista, reference_solution


logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
MIN_TRIALS = 100


def _check_delta(delta: float) -> None:
    if not 0.0 <= delta < 1.0:
        raise InvalidArgumentError(f"delta must lie in [0, 1), got {delta}")


def _gram(p: int, K: int, seed: int) -> np.ndarray:
    D = sample_gaussian_dictionary(p, K, seed).entries
    B = D.T @ D
    return 0.5 * (B + B.T)


def _orthogonal_unit(v: np.ndarray, i: int) -> Optional[np.ndarray]:
    """v with coordinate i removed, normalized; None if nothing is left."""
    h = np.array(v, dtype=np.float64, copy=True)
    h[i] = 0.0
    norm = np.linalg.norm(h)
    return None if norm < DEGENERATE_NORM else h / norm


def sample_e_delta(K: int, delta: float, seed: int,
                   h_directions: Optional[np.ndarray] = None) -> EDeltaMatrix:
    """
    Column i = sqrt(1 - delta^2) e_i + delta h_i with h_i a unit vector orthogonal to e_i.

    Args:
        h_directions: optional K x K matrix whose column i gives h_i (its e_i
            component is dropped); uniform on the sphere of span(e_i)^perp otherwise
    """
    _check_delta(delta)
    if K < 1:
        raise InvalidArgumentError(f"K must be positive, got {K}")
    if h_directions is not None and np.shape(h_directions) != (K, K):
        raise DimensionMismatchError(f"directions of shape {np.shape(h_directions)} for K={K}")

    rng = np.random.default_rng(seed)
    A = np.zeros((K, K))
    for i in range(K):
        h = None
        if h_directions is not None:
            h = _orthogonal_unit(np.asarray(h_directions, dtype=np.float64)[:, i], i)
            if h is None:
                raise InvalidArgumentError(f"direction {i} has no component orthogonal to e_{i}")
        elif K > 1:
            while h is None:
                h = _orthogonal_unit(rng.standard_normal(K), i)
        column = np.zeros(K)
        column[i] = np.sqrt(1.0 - delta * delta)
        if h is not None:
            column += delta * h
        else:
            column[i] = 1.0
        A[:, i] = column
    return EDeltaMatrix(A=A, delta=float(delta), mu_per_column=[float(delta)] * K)


def optimal_diagonal(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    S_i = A_i^T B A_i over the columns A_i of A.

    This is the minimizer of ||B - A S A^T||_F for unitary A, i.e. the optimal
    diagonal of the factorization whose rotation is A^T.
    """
    if A.shape != B.shape:
        raise DimensionMismatchError(f"A {A.shape} and B {B.shape} do not match")
    return np.einsum("ji,jk,ki->i", A, B, A)


def greedy_column(B: np.ndarray, i: int, delta: float) -> np.ndarray:
    """
    The E_{delta,i} member tilted toward the off-e_i part of B e_i.

    Falls back to e_i when B e_i has no such part.
    """
    _check_delta(delta)
    K = B.shape[0]
    column = np.zeros(K)
    h = _orthogonal_unit(B[:, i], i)
    if h is None:
        column[i] = 1.0
        return column
    column[i] = np.sqrt(1.0 - delta * delta)
    return column + delta * h


def greedy_factorization(B: np.ndarray, delta: float) -> Tuple[EDeltaMatrix, np.ndarray]:
    """Greedy E_delta matrix, column by column, and its optimal diagonal."""
    K = B.shape[0]
    A = np.column_stack([greedy_column(B, i, delta) for i in range(K)]) if K else np.zeros((0, 0))
    e_delta = EDeltaMatrix(A=A, delta=float(delta), mu_per_column=[float(delta)] * K)
    return e_delta, optimal_diagonal(A, B)


def frobenius_residual_inv(A: np.ndarray, S: np.ndarray, B: np.ndarray) -> float:
    """
    ||A^{-1} S A - B||_F^2 with the true inverse.

    Raises:
        InvalidArgumentError: A is singular
    """
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as e:
        raise InvalidArgumentError(f"singular rotation: {e}") from e
    M = A_inv @ (S[:, None] * A) - B
    return float(np.sum(M * M))


def frobenius_residual(A: np.ndarray, S: np.ndarray, B: np.ndarray) -> float:
    """||A^T S A - B||_F^2, the transpose counterpart of frobenius_residual_inv."""
    M = A.T @ (S[:, None] * A) - B
    return float(np.sum(M * M))


def e_delta_unitarity_check(A: EDeltaMatrix) -> float:
    """||A^T A - I||_F."""
    K = A.A.shape[0]
    return float(np.linalg.norm(A.A.T @ A.A - np.eye(K), "fro"))


def realized_gap_constant(B: np.ndarray) -> float:
    """
    sum_i ||B e_i - e_i||_2 / sqrt(K): the first-order greedy gain of this
    dictionary, whose expectation over generic dictionaries is close to
    sqrt(K(K-1)/p).
    """
    K = B.shape[0]
    off = B - np.diag(np.diag(B))
    return float(np.sum(np.linalg.norm(off, axis=0)) / np.sqrt(K))


def gap_condition(z: np.ndarray, z_star: np.ndarray, z_k: np.ndarray, lam: float, K: int, p: int,
                  constant: Optional[float] = None) -> GapEstimate:
    """
    lam ||z||_1 <= c ||z_k - z*||_2^2 with c = sqrt(K(K-1)/p) unless given.

    The theorem form adds lam ||z*||_1 to the left-hand side.
    """
    if K < 1 or p < 1:
        raise InvalidArgumentError(f"K and p must be positive, got K={K}, p={p}")
    c = np.sqrt(K * (K - 1) / p) if constant is None else float(constant)
    v = np.asarray(z_k, dtype=np.float64) - np.asarray(z_star, dtype=np.float64)
    rhs = float(c * (v @ v))
    lhs = float(lam * np.sum(np.abs(z)))
    theorem_lhs = lhs + float(lam * np.sum(np.abs(z_star)))
    return GapEstimate(
        lhs=lhs, rhs=rhs, margin=rhs - lhs, holds=lhs <= rhs,
        theorem_lhs=theorem_lhs, theorem_margin=rhs - theorem_lhs, theorem_holds=theorem_lhs <= rhs,
    )


def gap_trace(p: LassoProblem, K_iters: int, z_star: Optional[np.ndarray] = None,
              z0: Optional[np.ndarray] = None, realized: bool = False) -> List[GapEstimate]:
    """
    Gap condition at every ISTA iterate z_0..z_K (z_0 = 0 unless given),
    evaluated with the iterate itself as the network input.

    Args:
        realized: use the dictionary's own realized_gap_constant
    """
    if p.batched:
        raise InvalidArgumentError("gap_trace works on a single signal")
    if z_star is None:
        z_star = reference_solution(p)
    constant = realized_gap_constant(p.B) if realized else None
    trace = ista(p, z0, K_iters, record_iterates=True)
    n = p.D.shape[0]
    return [gap_condition(z_k, z_star, z_k, p.lam, p.m, n, constant) for z_k in trace.iterates]


def margins_monotone_to_failure(trace: Sequence[GapEstimate], tol: float = 1e-12) -> bool:
    """True when margins never increase before the first iterate where the condition fails."""
    margins = [g.margin for g in trace]
    end = next((k for k, g in enumerate(trace) if not g.holds), len(trace) - 1)
    return all(margins[k + 1] <= margins[k] + tol for k in range(end))


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values)), se


def _check_trials(trials: int) -> None:
    if trials < MIN_TRIALS:
        raise InvalidArgumentError(f"at least {MIN_TRIALS} trials are needed, got {trials}")


def mc_wishart_frobenius(K: int, p: int, trials: int, seed: int) -> MCReport:
    """E ||B||_F^2 over generic dictionaries against K(K-1)/p + K."""
    _check_trials(trials)
    values = np.array([np.sum(_gram(p, K, seed + t) ** 2) for t in range(trials)])
    estimate, se = _mean_se(values)
    reference = K * (K - 1) / p + K
    return MCReport(
        name="wishart_frobenius", estimate=estimate, std_error=se, reference=reference, trials=trials,
        within_tolerance=abs(estimate - reference) <= 3.0 * se + 1e-9,
        criterion="|estimate - reference| <= 3 se",
        params={"K": K, "p": p, "trials": trials, "seed": seed},
    )


def chi_moment_reference(K: int, p: int) -> float:
    """sqrt(2/p) Gamma(K/2) / Gamma((K-1)/2)."""
    if K < 2:
        raise InvalidArgumentError(f"K must be at least 2, got {K}")
    return float(np.sqrt(2.0 / p) * np.exp(gammaln(K / 2.0) - gammaln((K - 1) / 2.0)))


def mc_chi_moment(K: int, p: int, trials: int, seed: int) -> MCReport:
    """
    E[Y] with Y = sqrt(||D^T d_1||^2 - 1) against the scaled chi_{K-1} mean,
    plus E[Y^2] against (K-1)/p.

    Inner products of sphere vectors are slightly lighter-tailed than
    Gaussians; the second-order gap this leaves in E[Y] is reported as
    `finite_p_correction` and added to the tolerance.
    """
    if K < 2:
        raise InvalidArgumentError(f"K must be at least 2, got {K}")
    _check_trials(trials)
    squares = np.empty(trials)
    for t in range(trials):
        B = _gram(p, K, seed + t)
        squares[t] = max(float(B[:, 0] @ B[:, 0]) - B[0, 0] ** 2, 0.0)
    Y = np.sqrt(squares)

    estimate, se = _mean_se(Y)
    square_mean, square_se = _mean_se(squares)
    reference = chi_moment_reference(K, p)
    square_reference = (K - 1) / p
    mu = square_reference
    correction = (K - 1) * 6.0 / (p * p * (p + 2)) / (8.0 * mu ** 1.5)

    first_ok = abs(estimate - reference) <= 3.0 * se + correction
    second_ok = abs(square_mean - square_reference) <= 3.0 * square_se
    return MCReport(
        name="chi_moment", estimate=estimate, std_error=se, reference=reference, trials=trials,
        within_tolerance=bool(first_ok and second_ok),
        criterion="|E[Y] - ref| <= 3 se + finite_p_correction and |E[Y^2] - (K-1)/p| <= 3 se",
        params={"K": K, "p": p, "trials": trials, "seed": seed},
        extra={"second_moment": square_mean, "second_moment_se": square_se,
               "second_moment_reference": square_reference, "finite_p_correction": correction,
               "lower_bound": (K - 1) / np.sqrt(p * K)},
    )


def lemma1_leading_terms(K: int, p: int, delta: float) -> float:
    """K(K-1)/p - 4 delta (K-1) sqrt(K/p)."""
    return K * (K - 1) / p - 4.0 * delta * (K - 1) * np.sqrt(K / p)


def mc_lemma1(K: int, p: int, deltas: Sequence[float], trials: int, seed: int) -> MCReport:
    """
    Diagonalization error of the greedy E_delta factorization over generic dictionaries.

    Every trial evaluates all deltas (and delta = 0) on the same dictionary.
    The estimate is the delta = 0 anchor, E sum_{i != j} B_ij^2 = K(K-1)/p.
    The first-order slope in delta comes from a per-trial quadratic fit of
    ||A^T S A - B||_F^2 and must be within 25% of -4 (K-1) sqrt(K/p). The
    inverse form ||A^{-1} S A - B||_F^2 is reported alongside.
    """
    _check_trials(trials)
    grid = [0.0] + sorted(float(d) for d in deltas if d > 0)
    if len(grid) < 3:
        raise InvalidArgumentError("at least two positive deltas are needed for the slope fit")
    for d in grid:
        _check_delta(d)

    transposed = np.empty((len(grid), trials))
    inverse = np.empty((len(grid), trials))
    for t in range(trials):
        B = _gram(p, K, seed + t)
        for g, d in enumerate(grid):
            e_delta, S = greedy_factorization(B, d)
            transposed[g, t] = frobenius_residual(e_delta.A, S, B)
            inverse[g, t] = frobenius_residual_inv(e_delta.A, S, B)

    anchor, anchor_se = _mean_se(transposed[0])
    reference = K * (K - 1) / p
    coefficients = np.polyfit(np.array(grid), transposed, 2)
    slope, slope_se = _mean_se(coefficients[1])
    curvature, _ = _mean_se(coefficients[0])
    reference_slope = -4.0 * (K - 1) * np.sqrt(K / p)
    relative = abs(slope - reference_slope) / abs(reference_slope)
    largest_mean = float(np.mean(transposed[-1]))

    anchor_ok = abs(anchor - reference) <= 3.0 * anchor_se + 1e-9
    within = bool(anchor_ok and slope < 0 and relative <= 0.25 and largest_mean < anchor)
    extra: Dict[str, float] = {
        "slope": slope, "slope_se": slope_se, "reference_slope": reference_slope,
        "slope_relative_error": relative, "fitted_curvature": curvature,
    }
    for g, d in enumerate(grid):
        extra[f"mean_at_{d:g}"] = float(np.mean(transposed[g]))
        extra[f"inverse_mean_at_{d:g}"] = float(np.mean(inverse[g]))
        extra[f"leading_terms_at_{d:g}"] = lemma1_leading_terms(K, p, d)
    logger.debug(f"lemma1 K={K} p={p}: anchor {anchor:.4f}, slope {slope:.3f} vs {reference_slope:.3f}")
    return MCReport(
        name="lemma1", estimate=anchor, std_error=anchor_se, reference=reference, trials=trials,
        within_tolerance=within,
        criterion="anchor within 3 se; slope < 0 and within 25% of -4(K-1)sqrt(K/p); error drops at largest delta",
        params={"K": K, "p": p, "deltas": list(grid[1:]), "trials": trials, "seed": seed},
        extra=extra,
    )


def lemma2_bound(K: int, delta: float) -> float:
    """delta sqrt(K-1) - delta^2 / 2."""
    return delta * np.sqrt(K - 1) - 0.5 * delta * delta


def mc_lemma2(K: int, delta: float, trials: int, seed: int,
              code_model: Optional[BernoulliGaussianModel] = None, p: Optional[int] = None) -> MCReport:
    """
    E[delta_A(z)] / (lam E||z||_1) for the greedy E_delta matrix of a generic
    dictionary and iid codes (standard normal by default).

    The ratio of means has a delta-method standard error.
    """
    _check_trials(trials)
    _check_delta(delta)
    model = code_model or BernoulliGaussianModel(rho=1.0, sigma=1.0, m=K)
    if model.m != K:
        raise DimensionMismatchError(f"code model has m={model.m}, expected {K}")
    p = p or K
    Z, _ = sample_codes(model, trials, seed)

    gains = np.empty(trials)
    for t in range(trials):
        e_delta, _ = greedy_factorization(_gram(p, K, seed + t), delta)
        gains[t] = delta_A(e_delta.A, Z[t], 1.0)
    l1 = np.sum(np.abs(Z), axis=1)

    mean_l1 = float(np.mean(l1))
    if mean_l1 == 0.0:
        raise InvalidArgumentError("code model produced only zero codes")
    ratio = float(np.mean(gains)) / mean_l1
    covariance = np.cov(gains, l1) if trials > 1 else np.zeros((2, 2))
    variance = covariance[0, 0] - 2.0 * ratio * covariance[0, 1] + ratio * ratio * covariance[1, 1]
    se = float(np.sqrt(max(variance, 0.0) / trials) / mean_l1)
    bound = lemma2_bound(K, delta)
    return MCReport(
        name="lemma2", estimate=ratio, std_error=se, reference=bound, trials=trials,
        within_tolerance=ratio <= bound + 3.0 * se + 1e-12,
        criterion="ratio <= delta sqrt(K-1) - delta^2/2 + 3 se",
        params={"K": K, "p": p, "delta": delta, "trials": trials, "seed": seed,
                "rho": model.rho, "sigma": model.sigma},
    )


def mc_unitarity(K: int, delta: float, draws: int, seed: int,
                 slope_deltas: Tuple[float, float] = (1e-3, 5e-4)) -> MCReport:
    """
    ||A^T A - I||_F / (2 delta sqrt(K)) over random E_delta matrices.

    Passes when the mean ratio is at most 1.2, no draw exceeds 1.5 and the
    log-log slope between the two `slope_deltas` (same directions) is 1
    within 10%.
    """
    _check_delta(delta)
    if delta == 0:
        raise InvalidArgumentError("the unitarity ratio needs delta > 0")
    scale = 2.0 * delta * np.sqrt(K)
    ratios = np.array([e_delta_unitarity_check(sample_e_delta(K, delta, seed + t)) / scale
                       for t in range(draws)])
    estimate, se = _mean_se(ratios)

    big, small = slope_deltas
    slopes = []
    for t in range(draws):
        errors = [e_delta_unitarity_check(sample_e_delta(K, d, seed + t)) for d in (big, small)]
        slopes.append(np.log(errors[0] / errors[1]) / np.log(big / small))
    slope = float(np.mean(slopes))

    within = bool(estimate <= 1.2 and np.all(ratios <= 1.5) and abs(slope - 1.0) <= 0.1)
    return MCReport(
        name="unitarity", estimate=estimate, std_error=se, reference=1.0, trials=draws,
        within_tolerance=within,
        criterion="mean ratio to 2 delta sqrt(K) <= 1.2, max <= 1.5, log-log slope 1 +- 0.1",
        params={"K": K, "delta": delta, "draws": draws, "seed": seed},
        extra={"max_ratio": float(np.max(ratios)), "loglog_slope": slope},
    )
