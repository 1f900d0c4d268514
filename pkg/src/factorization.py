"""
Factorized proximal splitting: the (A, S) step and evaluators for the
convergence bounds built on the residual R = A^T S A - B.

All evaluators work on a single problem (x of shape (n,)); codes are 1-D.
"""
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

try:
    from .exceptions import InvalidArgumentError, DimensionMismatchError
    from .lasso_core import soft_threshold, lasso_cost
    from .models import Factorization, BoundReport, LassoProblem
    from .solvers import ista
except ImportError:
    from exceptions import InvalidArgumentError, DimensionMismatchError
    from lasso_core import soft_threshold, lasso_cost
    from models import Factorization, BoundReport, LassoProblem
    from solvers import ista


logger = logging.getLogger(__name__)


def delta_A(A: np.ndarray, z: np.ndarray, lam: float):
    """lam (||Az||_1 - ||z||_1); one value per row for a batch of codes."""
    if z.shape[-1] != A.shape[1]:
        raise DimensionMismatchError(f"code of length {z.shape[-1]} for a {A.shape} rotation")
    value = lam * (np.sum(np.abs(z @ A.T), axis=-1) - np.sum(np.abs(z), axis=-1))
    return float(value) if np.ndim(value) == 0 else value


def residual(A: np.ndarray, S: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, float]:
    """R = A^T S A - B (symmetrized) and its smallest eigenvalue."""
    if A.shape != B.shape or S.shape != (B.shape[0],):
        raise DimensionMismatchError(f"A {A.shape}, S {S.shape} and B {B.shape} do not match")
    R = A.T @ (S[:, None] * A) - B
    R = 0.5 * (R + R.T)
    return R, float(np.linalg.eigvalsh(R)[0])


def spectral_norm_sym(R: np.ndarray) -> float:
    """||R||_2 for a symmetric matrix."""
    eigenvalues = np.linalg.eigvalsh(R)
    return float(max(abs(eigenvalues[0]), abs(eigenvalues[-1])))


def make_factorization(A: np.ndarray, S: np.ndarray, B: np.ndarray) -> Factorization:
    """
    Build a Factorization, caching R and its PSD margin.

    Raises:
        InvalidArgumentError: non-positive entry in S
    """
    A = np.asarray(A, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if np.any(S <= 0):
        raise InvalidArgumentError("diagonal factor S must be positive")
    R, margin = residual(A, S, B)
    unitarity_error = float(np.linalg.norm(A.T @ A - np.eye(A.shape[0]), "fro"))
    factorization = Factorization(A=A, S=S, R=R, psd_margin=margin, unitarity_error=unitarity_error)
    if not factorization.is_unitary:
        logger.warning(f"factorization is not unitary (||A^T A - I||_F = {unitarity_error:.2e})")
    return factorization


def identity_factorization(p: LassoProblem) -> Factorization:
    """(I, L 1): the factorization under which the step is plain ISTA."""
    return make_factorization(np.eye(p.m), np.full(p.m, p.L), p.B)


def eigen_factorization(B: np.ndarray, floor: float = 1e-12) -> Factorization:
    """A = V^T, S = eigenvalues of B (floored to stay positive)."""
    eigenvalues, V = np.linalg.eigh(B)
    return make_factorization(V.T, np.maximum(eigenvalues, floor), B)


def factorized_kernel(z: np.ndarray, B: np.ndarray, dtx: np.ndarray, A: np.ndarray, S: np.ndarray,
                      lam: float):
    """
    Shared arithmetic of the factorized step, rows as codes.

    Returns:
        (z_next, u, w, grad) with u the pre-threshold point in the rotated
        basis, w = h_{lam/S}(u) and grad = zB - D^T x
    """
    grad = z @ B - dtx
    u = z @ A.T - (grad @ A.T) / S
    w = soft_threshold(u, lam / S)
    return w @ A, u, w, grad


def _step_details(p: LassoProblem, z_k: np.ndarray, f: Factorization):
    if np.any(f.S <= 0):
        raise InvalidArgumentError("diagonal factor S must be positive")
    z_next, u, w, _ = factorized_kernel(z_k, p.B, p.dtx, f.A, f.S, p.lam)
    return z_next, u, w


def factorized_step(p: LassoProblem, z_k: np.ndarray, f: Factorization) -> np.ndarray:
    """
    z_{k+1} = A^T h_{lam/S}(A z_k - S^{-1} A (B z_k - D^T x)).

    Works on one code or a batch (one per row).
    """
    return _step_details(p, z_k, f)[0]


def _prox_subgradient(p: LassoProblem, f: Factorization, z_next: np.ndarray,
                      u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """
    A subgradient of delta_A at z_next consistent with the proximal step.

    The step's optimality gives s in d||.||_1(w) with s = S(u - w)/lam; the
    l1 subgradient t of z_next picks sign(z_next) on the support and the
    closest admissible value to (A^T s) elsewhere.
    """
    if p.lam == 0:
        return np.zeros_like(z_next)
    s = np.where(w != 0, np.sign(w), f.S * u / p.lam)
    ats = s @ f.A
    t = np.where(z_next != 0, np.sign(z_next), np.clip(ats, -1.0, 1.0))
    return p.lam * (ats - t)


def lipschitz_bound(A: np.ndarray, z: np.ndarray, lam: float) -> Tuple[float, float, float]:
    """
    Local Lipschitz estimates of delta_A at z.

    Returns:
        (sparse_bound, uniform_bound, subgrad_norm) with
        sparse_bound = lam (sqrt(||z||_0) + sqrt(||Az||_0)),
        uniform_bound = (1 + ||A||_1) lam sqrt(m),
        subgrad_norm = ||lam (A^T sign(Az) - sign(z))||_2
    """
    Az = A @ z
    sparse = lam * (np.sqrt(np.count_nonzero(z)) + np.sqrt(np.count_nonzero(Az)))
    uniform = (1.0 + np.linalg.norm(A, 1)) * lam * np.sqrt(A.shape[0])
    subgrad = np.linalg.norm(lam * (A.T @ np.sign(Az) - np.sign(z)))
    return float(sparse), float(uniform), float(subgrad)


def prop1_check(p: LassoProblem, z_k: np.ndarray, f: Factorization, z_star: np.ndarray) -> BoundReport:
    """
    One factorized step against
    F(z_{k+1}) - F(z*) <= 1/2 ||R|| ||z_k - z*||^2 + delta_A(z*) - delta_A(z_{k+1}).

    A non-PSD residual is still evaluated but flagged through precondition_ok.
    """
    if not f.is_psd:
        logger.warning(f"prop1_check on a non-PSD residual (margin {f.psd_margin:.3e})")
    z_next = factorized_step(p, z_k, f)
    f_star = lasso_cost(p, z_star)
    norm_R = spectral_norm_sym(f.R)
    quadratic = 0.5 * norm_R * float(np.sum((z_k - z_star) ** 2))
    delta_star = delta_A(f.A, z_star, p.lam)
    delta_next = delta_A(f.A, z_next, p.lam)
    return BoundReport(
        name="prop1",
        lhs=lasso_cost(p, z_next) - f_star,
        rhs=quadratic + delta_star - delta_next,
        terms={"residual_quadratic": quadratic, "delta_star": delta_star,
               "delta_next": delta_next, "residual_norm": norm_R},
        precondition_ok=f.is_psd,
    )


def acceleration_condition(f: Factorization, z_k: np.ndarray, z_next: np.ndarray, z_star: np.ndarray,
                           B: np.ndarray, lam: float) -> Tuple[bool, float]:
    """
    ||R|| + 2 L_A(z_{k+1}) / ||z* - z_k|| <= ||B|| / 2 with the sparsity-based L_A.

    Returns:
        (holds, margin) with margin = ||B||/2 - lhs; -inf when z_k = z*
    """
    distance = float(np.linalg.norm(z_star - z_k))
    if distance == 0.0:
        return False, float("-inf")
    sparse, _, _ = lipschitz_bound(f.A, z_next, lam)
    lhs = spectral_norm_sym(f.R) + 2.0 * sparse / distance
    margin = 0.5 * float(np.linalg.eigvalsh(B)[-1]) - lhs
    return bool(margin >= 0), margin


def _run_schedule(p: LassoProblem, z0: np.ndarray, schedule: Sequence[Factorization]):
    codes = [np.array(z0, dtype=np.float64, copy=True)]
    subgradients = []
    for f in schedule:
        z_next, u, w = _step_details(p, codes[-1], f)
        subgradients.append(_prox_subgradient(p, f, z_next, u, w))
        codes.append(z_next)
    return codes, subgradients


def theorem1_bound(p: LassoProblem, z0: np.ndarray, schedule: Sequence[Factorization],
                   z_star: np.ndarray) -> BoundReport:
    """
    Run k = len(schedule) factorized steps and compare F(z_k) - F(z*) with

        [ ||R_0|| ||z* - z_0||^2 + alpha_0 + alpha - beta ] / (2k)

    where alpha_0 = 2 <g_0, z* - z_1>, alpha sums, for n = 1..k-1,
    2 <g_n, z* - z_{n+1}> + (z* - z_n)^T (R_n - R_{n-1}) (z* - z_n), and
    beta = 2 sum_n n (delta_{A_n}(z_{n+1}) - delta_{A_n}(z_n)). g_n is the
    subgradient of delta_{A_n} at z_{n+1} selected by the proximal step.
    With every step equal to (I, L 1) this is ||B|| ||z* - z_0||^2 / (2k).

    The statement form, with the sparsity-based L_A(z_{n+1}) ||z* - z_{n+1}||
    in place of the inner products, is reported in the terms as statement_rhs.
    quadratic_form_rhs is the same statement written with v_0^T R_0 v_0, the
    drift (R_{n-1} - R_n) and beta = sum_n (n+1) [(z_{n+1} - z_n)^T R_n (z_{n+1} - z_n)
    + 2 delta_{A_n}(z_{n+1}) - 2 delta_{A_n}(z_n)]; it is reported, not asserted.
    """
    k = len(schedule)
    if k == 0:
        raise InvalidArgumentError("schedule must hold at least one factorization")
    non_psd = [i for i, f in enumerate(schedule) if not f.is_psd]
    if non_psd:
        logger.warning(f"theorem1_bound: residuals {non_psd} are not PSD")

    codes, subgradients = _run_schedule(p, z0, schedule)
    f_star = lasso_cost(p, z_star)
    v = [z_star - z for z in codes]

    norm_R0 = spectral_norm_sym(schedule[0].R)
    leading = norm_R0 * float(v[0] @ v[0])
    inner = [2.0 * float(subgradients[n] @ v[n + 1]) for n in range(k)]
    drift = [float(v[n] @ (schedule[n].R - schedule[n - 1].R) @ v[n]) for n in range(1, k)]
    beta = 2.0 * sum(
        n * (delta_A(schedule[n].A, codes[n + 1], p.lam) - delta_A(schedule[n].A, codes[n], p.lam))
        for n in range(k)
    )
    alpha = sum(inner[1:]) + sum(drift)
    rhs = (leading + inner[0] + alpha - beta) / (2.0 * k)

    lipschitz = [
        lipschitz_bound(schedule[n].A, codes[n + 1], p.lam)[0] * float(np.linalg.norm(v[n + 1]))
        for n in range(k)
    ]
    statement_rhs = (leading + 2.0 * sum(lipschitz) + sum(drift) - beta) / (2.0 * k)

    steps = [codes[n + 1] - codes[n] for n in range(k)]
    quadratic_beta = sum(
        (n + 1) * (float(steps[n] @ schedule[n].R @ steps[n])
                   + 2.0 * delta_A(schedule[n].A, codes[n + 1], p.lam)
                   - 2.0 * delta_A(schedule[n].A, codes[n], p.lam))
        for n in range(k)
    )
    quadratic_form_rhs = (float(v[0] @ schedule[0].R @ v[0]) + 2.0 * sum(lipschitz)
                          - sum(drift) - quadratic_beta) / (2.0 * k)

    terms: Dict[str, float] = {
        "k": float(k),
        "residual_quadratic": leading,
        "residual_quadratic_exact": float(v[0] @ schedule[0].R @ v[0]),
        "subgradient_terms": 0.5 * sum(inner),
        "lipschitz_terms": sum(lipschitz),
        "schedule_drift": sum(drift),
        "alpha": alpha,
        "beta": beta,
        "statement_rhs": statement_rhs,
        "quadratic_form_rhs": quadratic_form_rhs,
        "ista_rhs": p.L * float(v[0] @ v[0]) / (2.0 * k),
    }
    return BoundReport(
        name="theorem1",
        lhs=lasso_cost(p, codes[-1]) - f_star,
        rhs=rhs,
        terms=terms,
        precondition_ok=not non_psd,
    )


def corollary1_bound(p: LassoProblem, z0: np.ndarray, f0: Factorization, k: int,
                     z_star: np.ndarray) -> BoundReport:
    """
    First step with f0, then k - 1 ISTA steps.

    rhs is the schedule bound of theorem1_bound; the closed form
    [v0^T R0 v0 + 2 L_A0(z1)(||z* - z1|| + ||z1 - z0||) + v1^T R0 v1] / (2k)
    and the ISTA reference ||B|| ||z* - z0||^2 / (2k) are reported in the terms.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be at least 1, got {k}")
    identity = identity_factorization(p)
    report = theorem1_bound(p, z0, [f0] + [identity] * (k - 1), z_star)

    z1 = factorized_step(p, z0, f0)
    v0, v1 = z_star - z0, z_star - z1
    sparse, _, _ = lipschitz_bound(f0.A, z1, p.lam)
    closed_form = (float(v0 @ f0.R @ v0)
                   + 2.0 * sparse * (float(np.linalg.norm(v1)) + float(np.linalg.norm(z1 - z0)))
                   + float(v1 @ f0.R @ v1)) / (2.0 * k)
    holds, margin = acceleration_condition(f0, z0, z1, z_star, p.B, p.lam)

    report.name = "corollary1"
    report.terms.update({
        "closed_form_rhs": closed_form,
        "acceleration_holds": float(holds),
        "acceleration_margin": margin,
        "improves_on_ista": float(closed_form < report.terms["ista_rhs"]),
    })
    return report


def dataset_factorization_objective(f: Factorization, Z0: np.ndarray, Z1: np.ndarray, Z_star: np.ndarray,
                                    B: np.ndarray, lam: float) -> float:
    """
    Mean over samples (rows) of 1/2 (z0 - z*)^T R (z0 - z*) + delta_A(z*) - delta_A(z1).

    R is recomputed from B so the objective follows the given Gram matrix.
    """
    R, margin = residual(f.A, f.S, B)
    if margin < -1e-10:
        logger.warning(f"dataset objective evaluated on a non-PSD residual (margin {margin:.3e})")
    V = np.atleast_2d(Z0) - np.atleast_2d(Z_star)
    quadratic = 0.5 * np.einsum("ij,jk,ik->i", V, R, V)
    value = quadratic + delta_A(f.A, np.atleast_2d(Z_star), lam) - delta_A(f.A, np.atleast_2d(Z1), lam)
    return float(np.mean(value))


def acceleration_trace(p: LassoProblem, f: Factorization, K_iters: int, z_star: np.ndarray) -> List[Dict[str, float]]:
    """
    Acceleration condition of a fixed factorization along ISTA iterates from 0.

    Shows where swapping one ISTA step for an (A, S) step stops paying off as
    ||z_k - z*|| shrinks.
    """
    trace = ista(p, None, K_iters, record_iterates=True)
    rows = []
    for k, z_k in enumerate(trace.iterates):
        z_next = factorized_step(p, z_k, f)
        holds, margin = acceleration_condition(f, z_k, z_next, z_star, p.B, p.lam)
        rows.append({
            "iteration": k,
            "distance": float(np.linalg.norm(z_star - z_k)),
            "holds": holds,
            "margin": margin,
        })
    return rows


def bound_suite(p: LassoProblem, z_star: np.ndarray, k: int) -> List[BoundReport]:
    """
    Bounds for one signal from z_0 = 0: one identity step, k identity steps
    and k steps opened by the eigen factorization of B.
    """
    if p.batched:
        raise InvalidArgumentError("bounds are evaluated on a single signal")
    if k < 1:
        raise InvalidArgumentError(f"k must be at least 1, got {k}")
    z0 = np.zeros(p.m)
    identity = identity_factorization(p)
    return [
        prop1_check(p, z0, identity, z_star),
        theorem1_bound(p, z0, [identity] * k, z_star),
        corollary1_bound(p, z0, eigen_factorization(p.B), k, z_star),
    ]
