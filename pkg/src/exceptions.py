"""
Custom exceptions for the Sparse Splitting Lab.
Provides specific exception types for different error scenarios.
"""
from typing import Optional


class SparseLabError(Exception):
    """Base exception for the sparse coding lab."""
    pass


class ConfigurationError(SparseLabError):
    """Raised when configuration is invalid or missing."""
    pass


class InvalidArgumentError(SparseLabError, ValueError):
    """Raised when an operation receives an argument outside its domain."""
    pass


class DimensionMismatchError(InvalidArgumentError):
    """Raised when array shapes do not agree."""
    pass


class FileOperationError(SparseLabError):
    """Raised when file operations fail."""
    pass


class MatrixFormatError(FileOperationError):
    """Raised when a matrix file is malformed."""
    pass


class ReportGenerationError(SparseLabError):
    """Raised when report generation fails."""
    pass


class ConvergenceError(SparseLabError):
    """Raised when an iterative solver does not reach its tolerance."""

    def __init__(self, message: str, residual: Optional[float] = None, iterations: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class TrainingError(SparseLabError):
    """Raised when training diverges."""

    def __init__(self, message: str, step: Optional[int] = None, loss: Optional[float] = None):
        super().__init__(message)
        self.step = step
        self.loss = loss


class ProjectionError(SparseLabError):
    """Raised when a matrix cannot be projected on the Stiefel manifold."""
    pass


class RetryableError(SparseLabError):
    """Base class for errors that can be retried."""
    pass


class RetryableWriteError(RetryableError, FileOperationError):
    """Raised when an output file could not be moved into place."""
    pass
