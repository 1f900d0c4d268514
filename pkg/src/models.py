"""
Data models for the Sparse Splitting Lab.

This module defines the core data structures used throughout the lab:
problems and dictionaries, solver traces, factorizations and bound reports,
network parameters, Monte-Carlo reports and experiment configuration.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional

import numpy as np

try:
    from .exceptions import InvalidArgumentError
except ImportError:
    from exceptions import InvalidArgumentError


logger = logging.getLogger(__name__)

# A sparse code is a plain float64 vector of length m (or a batch of them, one per row).
SparseCode = np.ndarray

DICTIONARY_KINDS = ("gaussian", "fourier_adversarial", "user_supplied")
NETWORK_KINDS = ("lista", "lfista", "facnet")
EXPERIMENT_KINDS = ("fig_layers", "fig_adverse", "fig_gap", "mc_verify", "custom")

COLUMN_NORM_TOL = 1e-12


@dataclass
class Dictionary:
    """An n x m dictionary with unit-norm atoms as columns."""
    entries: np.ndarray
    seed: Optional[int] = None
    kind: str = "user_supplied"

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or min(self.entries.shape) < 1:
            raise InvalidArgumentError(f"dictionary must be a non-empty 2-D matrix, got shape {self.entries.shape}")
        if self.kind not in DICTIONARY_KINDS:
            raise InvalidArgumentError(f"unknown dictionary kind: {self.kind}")
        norms = np.linalg.norm(self.entries, axis=0)
        if np.max(np.abs(norms - 1.0)) > COLUMN_NORM_TOL:
            raise InvalidArgumentError("dictionary columns must have unit l2 norm")
        if self.m <= self.n:
            logger.warning(f"dictionary is not overcomplete (n={self.n}, m={self.m})")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_matrix(cls, entries: np.ndarray, kind: str = "user_supplied",
                    seed: Optional[int] = None) -> "Dictionary":
        """Build a dictionary from raw atoms, normalizing every column."""
        entries = np.asarray(entries, dtype=np.float64)
        norms = np.linalg.norm(entries, axis=0)
        if np.any(norms == 0.0):
            raise InvalidArgumentError("dictionary contains a zero atom")
        return cls(entries=entries / norms, seed=seed, kind=kind)


@dataclass
class LassoProblem:
    """
    Everything needed to evaluate F_x(z) = 1/2 ||x - Dz||^2 + lam ||z||_1.

    `x` is either one signal (n,) or a batch of signals (N, n), one per row;
    `y` and `dtx` follow the same layout.
    """
    dictionary: Dictionary
    x: np.ndarray
    y: np.ndarray
    B: np.ndarray
    lam: float
    L: float
    dtx: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return self.dictionary.entries

    @property
    def m(self) -> int:
        return self.dictionary.m

    @property
    def batched(self) -> bool:
        return self.x.ndim == 2


@dataclass
class BernoulliGaussianModel:
    """Codes with z_i = b_i a_i, b_i ~ Bernoulli(rho), a_i ~ N(0, sigma^2)."""
    rho: float
    sigma: float
    m: int

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidArgumentError(f"rho must lie in [0, 1], got {self.rho}")
        if self.sigma <= 0:
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")
        if self.m < 1:
            raise InvalidArgumentError(f"m must be positive, got {self.m}")


@dataclass
class SolverTrace:
    """Per-iteration record of a solver run (means over rows for batched problems)."""
    method: str
    costs: List[float]
    support_sizes: List[float]
    final: np.ndarray
    iterates: Optional[List[np.ndarray]] = None
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.costs) - 1


@dataclass
class LinearBaseline:
    """One linear layer z_out = A0 x used as a warm start."""
    A0: np.ndarray


@dataclass
class Factorization:
    """A (A, S) pair with its cached residual R = A^T S A - B."""
    A: np.ndarray
    S: np.ndarray
    R: np.ndarray
    psd_margin: float
    unitarity_error: float

    UNITARY_TOL = 1e-6

    @property
    def is_unitary(self) -> bool:
        return self.unitarity_error <= self.UNITARY_TOL

    @property
    def is_psd(self) -> bool:
        return self.psd_margin >= -1e-10


@dataclass
class BoundReport:
    """Evaluated inequality lhs <= rhs with its named terms."""
    name: str
    lhs: float
    rhs: float
    terms: Dict[str, float] = field(default_factory=dict)
    precondition_ok: bool = True
    satisfied: bool = False

    TOLERANCE = 1e-9

    def __post_init__(self):
        self.satisfied = bool(self.lhs <= self.rhs + self.TOLERANCE)


@dataclass
class ListaLayer:
    W_g: np.ndarray
    W_e: np.ndarray
    theta: np.ndarray


@dataclass
class LfistaLayer:
    W_g: np.ndarray
    W_m: np.ndarray
    W_e: np.ndarray
    theta: np.ndarray


@dataclass
class FacnetLayer:
    """One factorized layer; S = exp(s) stays positive under free updates of s."""
    A: np.ndarray
    s: np.ndarray

    @property
    def S(self) -> np.ndarray:
        return np.exp(self.s)


@dataclass
class NetworkParams:
    """Per-layer parameter stack of an unrolled network."""
    kind: str
    layers: List[Any]
    lam: float
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in NETWORK_KINDS:
            raise InvalidArgumentError(f"unknown network kind: {self.kind}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "NetworkParams":
        layers = [
            replace(layer, **{f.name: np.array(getattr(layer, f.name), copy=True) for f in fields(layer)})
            for layer in self.layers
        ]
        return replace(self, layers=layers)

    def parameter_count(self) -> int:
        return sum(getattr(layer, f.name).size for layer in self.layers for f in fields(layer))


@dataclass
class TrainConfig:
    """Adagrad training settings."""
    steps: int = 50000
    batch_size: int = 500
    learning_rate: float = 0.01
    adagrad_epsilon: float = 1e-8
    seed: int = 0
    eval_every: int = 500
    mu: float = 1.0
    greedy: bool = False
    divergence_factor: float = 1e6
    validation_size: int = 500
    # None: learning_rate / m, so a first step moves each A by about learning_rate in Frobenius norm
    rotation_learning_rate: Optional[float] = None


@dataclass
class BaselineConfig:
    """SGD settings for the linear warm-start baseline."""
    steps: int = 10000
    learning_rate: float = 0.01
    seed: int = 0


@dataclass
class GapConfig:
    """Sizes of the gap-condition traces."""
    n: int = 16
    m: int = 32
    iterations: int = 100
    n_seeds: int = 50


@dataclass
class MCConfig:
    """Sizes of the Monte-Carlo verification suite."""
    wishart_K: int = 20
    wishart_p: int = 10
    wishart_trials: int = 2000
    chi_sizes: List[List[int]] = field(default_factory=lambda: [[10, 20], [30, 50]])
    chi_trials: int = 5000
    lemma1_K: int = 20
    lemma1_p: int = 10
    lemma1_deltas: List[float] = field(default_factory=lambda: [0.005, 0.01, 0.02])
    lemma1_trials: int = 2000
    lemma2_K: int = 50
    lemma2_deltas: List[float] = field(default_factory=lambda: [0.01, 0.05])
    lemma2_trials: int = 5000
    unitarity_K: int = 50
    unitarity_delta: float = 0.01
    unitarity_draws: int = 100


@dataclass
class ExperimentConfig:
    """Resolved configuration of one experiment run."""
    experiment: str = "fig_layers"
    n: int = 64
    m: int = 100
    rho: float = 0.05
    sigma: float = 10.0
    lam: float = 0.01
    depths: List[int] = field(default_factory=lambda: [0, 1, 2, 4, 7])
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 42
    output_dir: str = "results"
    layer_rhos: List[float] = field(default_factory=lambda: [0.05, 0.25])
    test_size: int = 1000
    reference_tol: float = 1e-12
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    gap: GapConfig = field(default_factory=GapConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    dict_path: Optional[str] = None


@dataclass
class EDeltaMatrix:
    """K x K matrix whose column i lies in E_{delta,i}."""
    A: np.ndarray
    delta: float
    mu_per_column: List[float]


@dataclass
class GapEstimate:
    """Gap condition lam ||z||_1 <= sqrt(K(K-1)/p) ||z_k - z*||^2 and its theorem form."""
    lhs: float
    rhs: float
    margin: float
    holds: bool
    theorem_lhs: float = 0.0
    theorem_margin: float = 0.0
    theorem_holds: bool = False


@dataclass
class MCReport:
    """Monte-Carlo estimate compared to a reference value."""
    name: str
    estimate: float
    std_error: float
    reference: float
    trials: int
    within_tolerance: bool
    criterion: str = ""
    params: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, float] = field(default_factory=dict)


@dataclass
class ResultRow:
    """One cell of a depth/iteration comparison table."""
    setting: str
    method: str
    depth: int
    mean_cost_gap: float
    std_error: float
    n_samples: int
    status: str = "ok"


@dataclass
class ResultTable:
    """Rows of (method, depth_or_iteration, mean_cost_gap, std_error, n_samples)."""
    rows: List[ResultRow] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    def add(self, row: ResultRow) -> None:
        if row.mean_cost_gap < -1e-9:
            logger.warning(f"negative cost gap {row.mean_cost_gap:.3e} for {row.method} at depth {row.depth}")
        self.rows.append(row)

    def gap(self, method: str, depth: int, setting: Optional[str] = None) -> float:
        for row in self.rows:
            if row.method == method and row.depth == depth and (setting is None or row.setting == setting):
                return row.mean_cost_gap
        raise KeyError(f"no row for method={method} depth={depth} setting={setting}")


@dataclass
class GapTraceTable:
    """Gap-condition margins averaged over problems, one row per (dictionary, iteration)."""
    rows: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentArtifacts:
    """Trained models and training curves collected by a pipeline run, keyed by cell name."""
    models: Dict[str, NetworkParams] = field(default_factory=dict)
    curves: Dict[str, List[Dict[str, float]]] = field(default_factory=dict)
    baselines: Dict[str, LinearBaseline] = field(default_factory=dict)


# Utility functions for model conversion
def bound_report_to_dict(report: BoundReport) -> Dict[str, Any]:
    """Convert BoundReport to dictionary."""
    return {
        "name": report.name,
        "lhs": report.lhs,
        "rhs": report.rhs,
        "satisfied": report.satisfied,
        "precondition_ok": report.precondition_ok,
        "terms": dict(report.terms),
    }


def mc_report_to_dict(report: MCReport) -> Dict[str, Any]:
    """Convert MCReport to dictionary."""
    return {
        "name": report.name,
        "estimate": report.estimate,
        "std_error": report.std_error,
        "reference": report.reference,
        "trials": report.trials,
        "within_tolerance": report.within_tolerance,
        "criterion": report.criterion,
        "params": dict(report.params),
        "extra": dict(report.extra),
    }


def gap_estimate_to_dict(estimate: GapEstimate) -> Dict[str, Any]:
    """Convert GapEstimate to dictionary."""
    return {
        "lhs": estimate.lhs,
        "rhs": estimate.rhs,
        "margin": estimate.margin,
        "holds": estimate.holds,
        "theorem_lhs": estimate.theorem_lhs,
        "theorem_margin": estimate.theorem_margin,
        "theorem_holds": estimate.theorem_holds,
    }


def result_row_to_dict(row: ResultRow) -> Dict[str, Any]:
    """Convert ResultRow to dictionary."""
    return {
        "setting": row.setting,
        "method": row.method,
        "depth": row.depth,
        "mean_cost_gap": row.mean_cost_gap,
        "std_error": row.std_error,
        "n_samples": row.n_samples,
        "status": row.status,
    }
