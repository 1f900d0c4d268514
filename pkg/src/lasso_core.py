"""
LASSO problem definition, cost evaluation, soft-thresholding and synthetic
dictionary/code generators.

Batched signals are stored one per row: X is (N, n), codes Z are (N, m), so
Dz becomes Z @ D.T and D^T x becomes X @ D.
"""
import logging
from typing import Optional, Tuple, Union

import numpy as np

try:
    from .exceptions import InvalidArgumentError, DimensionMismatchError
    from .models import Dictionary, LassoProblem, BernoulliGaussianModel
except ImportError:
    from exceptions import InvalidArgumentError, DimensionMismatchError
    from models import Dictionary, LassoProblem, BernoulliGaussianModel


logger = logging.getLogger(__name__)

DENSE_EIGEN_MAX_DIM = 256
PINV_RCOND = 1e-10


def soft_threshold(u: np.ndarray, theta: Union[float, np.ndarray]) -> np.ndarray:
    """
    h_theta(u) = sign(u) * max(|u| - theta, 0), coordinate-wise.

    Args:
        u: vector or batch of vectors (one per row)
        theta: scalar or per-coordinate thresholds, broadcast against u

    Raises:
        InvalidArgumentError: if any threshold is negative
    """
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise InvalidArgumentError("soft-threshold levels must be non-negative")
    return np.sign(u) * np.maximum(np.abs(u) - theta, 0.0)


def _check_code(p: LassoProblem, z: np.ndarray) -> None:
    if z.shape[-1] != p.m:
        raise DimensionMismatchError(f"code has {z.shape[-1]} coordinates, dictionary has {p.m} atoms")
    if p.batched and z.ndim == 2 and z.shape[0] != p.x.shape[0]:
        raise DimensionMismatchError(f"{z.shape[0]} codes for {p.x.shape[0]} signals")


def lasso_cost(p: LassoProblem, z: np.ndarray) -> Union[float, np.ndarray]:
    """
    F_x(z) = 1/2 ||x - Dz||^2 + lam ||z||_1.

    Returns a float for a single problem and one cost per row for a batch.
    """
    z = np.asarray(z, dtype=np.float64)
    _check_code(p, z)
    residual = p.x - z @ p.D.T
    cost = 0.5 * np.sum(residual * residual, axis=-1) + p.lam * np.sum(np.abs(z), axis=-1)
    if np.ndim(cost) == 0:
        return float(cost)
    return cost


def spectral_norm(B: np.ndarray, max_iter: int = 10000, tol: float = 1e-10, seed: int = 0) -> float:
    """
    Largest eigenvalue of a symmetric PSD matrix.

    Uses the dense symmetric eigensolver up to DENSE_EIGEN_MAX_DIM and power
    iteration above, falling back to the dense solver if the iteration stalls.
    """
    m = B.shape[0]
    if m <= DENSE_EIGEN_MAX_DIM:
        return float(np.linalg.eigvalsh(B)[-1])

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = B @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        previous, estimate = estimate, float(v @ B @ v)
        if abs(estimate - previous) <= tol * abs(estimate):
            return estimate

    logger.warning(f"power iteration did not reach rel. tol {tol:g} in {max_iter} steps, using eigvalsh")
    return float(np.linalg.eigvalsh(B)[-1])


def pseudo_inverse(D: np.ndarray, rcond: float = PINV_RCOND) -> np.ndarray:
    """Least-norm inverse via SVD, dropping singular values below rcond * sigma_max."""
    U, sigma, Vt = np.linalg.svd(D, full_matrices=False)
    keep = sigma > rcond * sigma[0] if sigma.size else sigma.astype(bool)
    return (Vt[keep].T / sigma[keep]) @ U[:, keep].T


def build_problem(d: Dictionary, x: np.ndarray, lam: float) -> LassoProblem:
    """
    Bundle a dictionary and signal(s) into a LassoProblem.

    Args:
        d: dictionary
        x: signal (n,) or batch (N, n)
        lam: regularization weight

    Raises:
        InvalidArgumentError: negative lam
        DimensionMismatchError: signal length differs from n
    """
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be non-negative, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != d.n:
        raise DimensionMismatchError(f"signal shape {x.shape} does not match dictionary with n={d.n}")

    D = d.entries
    B = D.T @ D
    B = 0.5 * (B + B.T)
    L = spectral_norm(B)
    y = x @ pseudo_inverse(D).T
    return LassoProblem(dictionary=d, x=x, y=y, B=B, lam=float(lam), L=L, dtx=x @ D)


def sub_problem(p: LassoProblem, index) -> LassoProblem:
    """Restrict a batched problem to some rows, sharing B and L."""
    return LassoProblem(dictionary=p.dictionary, x=p.x[index], y=p.y[index], B=p.B,
                        lam=p.lam, L=p.L, dtx=p.dtx[index])


def sample_gaussian_dictionary(n: int, m: int, seed: int) -> Dictionary:
    """Atoms d_i / ||d_i|| with d_i ~ N(0, I_n), i.e. uniform on the unit sphere."""
    if n < 1 or m < 1:
        raise InvalidArgumentError(f"dimensions must be positive, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    return Dictionary.from_matrix(rng.standard_normal((n, m)), kind="gaussian", seed=seed)


def sample_codes(model: BernoulliGaussianModel, count: int, seed: int,
                 dictionary: Optional[Dictionary] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Draw Bernoulli-Gaussian codes, one per row, and their signals X = Z D^T.

    Returns:
        (Z, X) with X None when no dictionary is given
    """
    if dictionary is not None and dictionary.m != model.m:
        raise DimensionMismatchError(f"model has m={model.m}, dictionary has m={dictionary.m}")
    rng = np.random.default_rng(seed)
    active = rng.random((count, model.m)) < model.rho
    amplitude = rng.normal(0.0, model.sigma, size=(count, model.m))
    Z = np.where(active, amplitude, 0.0)
    X = Z @ dictionary.entries.T if dictionary is not None else None
    return Z, X


def adversarial_fourier_dictionary(n: int, m: int, seed: int) -> Dictionary:
    """
    Real Fourier dictionary with flat Gram eigenvectors.

    n/2 frequencies zeta are drawn without replacement from {1/m, ..., (m/2)/m};
    each contributes the rows cos(2 pi j zeta) and sin(2 pi j zeta), j = 1..m.
    Columns are then normalized.
    """
    if n < 2 or n % 2:
        raise InvalidArgumentError(f"n must be a positive even number, got {n}")
    available = m // 2
    if available < n // 2:
        raise InvalidArgumentError(f"only {available} distinct frequencies for {n // 2} frequency pairs")

    frequencies = adversarial_frequencies(n, m, seed)
    j = np.arange(1, m + 1)
    phase = 2.0 * np.pi * np.outer(frequencies, j)
    rows = np.empty((n, m))
    rows[0::2] = np.cos(phase)
    rows[1::2] = np.sin(phase)
    dictionary = Dictionary.from_matrix(rows, kind="fourier_adversarial", seed=seed)
    logger.debug(f"adversarial dictionary frequencies: {np.sort(frequencies * m).astype(int).tolist()}")
    return dictionary


def adversarial_frequencies(n: int, m: int, seed: int) -> np.ndarray:
    """The frequencies adversarial_fourier_dictionary draws for (n, m, seed)."""
    rng = np.random.default_rng(seed)
    return rng.choice(np.arange(1, m // 2 + 1), size=n // 2, replace=False) / m
