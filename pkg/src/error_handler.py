"""
Error bookkeeping for the Sparse Splitting Lab.

Pipelines record per-cell failures (a diverging network, a failed workbook)
under a context string and carry on; atomic output writes are retried with
exponential backoff when the final rename fails.
"""
import functools
import logging
import time
import traceback
from typing import Any, Callable, Dict, Optional, Tuple, Type, Union

try:
    from .exceptions import (
        SparseLabError, RetryableError, ConvergenceError, TrainingError,
        ProjectionError, InvalidArgumentError
    )
except ImportError:
    from exceptions import (
        SparseLabError, RetryableError, ConvergenceError, TrainingError,
        ProjectionError, InvalidArgumentError
    )


logger = logging.getLogger(__name__)

ExceptionTypes = Union[Type[Exception], Tuple[Type[Exception], ...]]

# first match wins
ERROR_CATEGORIES = (
    ((ConvergenceError, TrainingError, ProjectionError, FloatingPointError), "numerical"),
    ((FileNotFoundError,), "file_not_found"),
    ((PermissionError,), "permission"),
    ((InvalidArgumentError, ValueError, TypeError), "validation"),
    ((KeyError,), "missing_data"),
    ((SparseLabError,), "application"),
)


class ErrorHandler:
    """Counts failures per context and retries retryable operations."""

    def __init__(self, max_retries: int = 3, base_delay: float = 0.1):
        """
        Args:
            max_retries: retries after the first attempt
            base_delay: first backoff delay in seconds
        """
        self.max_retries = max_retries
        self.base_delay = base_delay
        self.error_counts: Dict[str, int] = {}
        self.last_errors: Dict[str, Dict[str, Any]] = {}

    def _record(self, context: str, error: Exception, **details) -> None:
        self.error_counts[context] = self.error_counts.get(context, 0) + 1
        entry = {'error_type': type(error).__name__, 'error_message': str(error)}
        entry.update(details)
        self.last_errors[context] = entry

    def backoff_delay(self, attempt: int, backoff_factor: float, max_delay: float) -> float:
        """Delay before retry number `attempt + 1`."""
        return min(self.base_delay * backoff_factor ** attempt, max_delay)

    def retry_on_error(self, retryable_exceptions: ExceptionTypes = (RetryableError,),
                       max_retries: Optional[int] = None, backoff_factor: float = 2.0,
                       max_delay: float = 5.0) -> Callable[[Callable], Callable]:
        """
        Decorator: retry on `retryable_exceptions`, re-raise anything else at once.

        A success clears the function's error count.
        """
        retries = self.max_retries if max_retries is None else max_retries

        def decorator(func: Callable) -> Callable:
            name = f"{func.__module__}.{func.__name__}"

            @functools.wraps(func)
            def wrapper(*args, **kwargs) -> Any:
                attempt = 0
                while True:
                    try:
                        result = func(*args, **kwargs)
                    except retryable_exceptions as e:
                        self._record(name, e, attempt=attempt + 1)
                        if attempt >= retries:
                            logger.error(f"{name} failed {attempt + 1} times, giving up: {e}")
                            raise
                        delay = self.backoff_delay(attempt, backoff_factor, max_delay)
                        logger.warning(f"{name} attempt {attempt + 1}/{retries + 1} failed ({e}); "
                                       f"retrying in {delay:.2f}s")
                        time.sleep(delay)
                        attempt += 1
                    except Exception as e:
                        logger.error(f"{name} failed with a non-retryable {type(e).__name__}: {e}")
                        logger.debug(traceback.format_exc())
                        raise
                    else:
                        self.error_counts.pop(name, None)
                        return result

            return wrapper
        return decorator

    def handle_error(self, error: Exception, context: str, critical: bool = False) -> None:
        """Log `error` and count it under `context`; critical errors log their traceback."""
        category = categorize_error(error)
        message = f"{context}: {type(error).__name__} ({category}): {error}"
        if critical:
            logger.critical(message)
            logger.critical(traceback.format_exc())
        else:
            logger.error(message)
            logger.debug(traceback.format_exc())
        self._record(context, error, category=category, critical=critical)

    def get_error_summary(self) -> Dict[str, Any]:
        return {
            'error_counts': dict(self.error_counts),
            'last_errors': dict(self.last_errors),
            'total_errors': sum(self.error_counts.values()),
        }

    def reset_error_tracking(self) -> None:
        self.error_counts.clear()
        self.last_errors.clear()
        logger.debug("error tracking reset")


def safe_execute(func: Callable, *args, default_return: Any = None,
                 error_handler: Optional[ErrorHandler] = None, context: str = "unknown", **kwargs) -> Any:
    """
    Call func(*args, **kwargs); on any exception record it and return `default_return`.

    Used for outputs whose failure must not abort a run.
    """
    handler = error_handler or ErrorHandler()
    try:
        return func(*args, **kwargs)
    except Exception as e:
        handler.handle_error(e, context)
        return default_return


def categorize_error(error: Exception) -> str:
    """One of numerical, file_not_found, permission, validation, missing_data, application, unknown."""
    return next((category for types, category in ERROR_CATEGORIES if isinstance(error, types)), "unknown")


def create_error_context(operation: str, experiment: Optional[str] = None, seed: Optional[int] = None,
                         additional_info: Optional[dict] = None) -> str:
    """'operation | experiment=... | seed=... | key=value ...', skipping what is not given."""
    parts = [operation]
    if experiment:
        parts.append(f"experiment={experiment}")
    if seed is not None:
        parts.append(f"seed={seed}")
    parts.extend(f"{key}={value}" for key, value in (additional_info or {}).items())
    return " | ".join(parts)


# shared by the module-level decorators in matrix_io
global_error_handler = ErrorHandler()
