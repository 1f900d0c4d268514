"""
Portable matrix files and the dataset/model bundles built on them.

Matrix file layout: line 1 is "rows,cols", then `rows` lines of `cols`
comma-separated float64 values written with their shortest exact decimal.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

try:
    from .exceptions import (
        SparseLabError, FileOperationError, MatrixFormatError, RetryableWriteError, InvalidArgumentError
    )
    from .error_handler import global_error_handler
    from .models import (
        Dictionary, NetworkParams, ListaLayer, LfistaLayer, FacnetLayer
    )
except ImportError:
    from exceptions import (
        SparseLabError, FileOperationError, MatrixFormatError, RetryableWriteError, InvalidArgumentError
    )
    from error_handler import global_error_handler
    from models import (
        Dictionary, NetworkParams, ListaLayer, LfistaLayer, FacnetLayer
    )


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

LAYER_TYPES = {"lista": ListaLayer, "lfista": LfistaLayer, "facnet": FacnetLayer}
LAYER_FIELDS = {
    "lista": ("W_g", "W_e", "theta"),
    "lfista": ("W_g", "W_m", "W_e", "theta"),
    "facnet": ("A", "s"),
}
# raised while reading well-formed JSON with missing or mistyped fields
MALFORMED_METADATA = (KeyError, TypeError, ValueError, AttributeError)


@global_error_handler.retry_on_error(retryable_exceptions=(RetryableWriteError,), max_retries=2)
def atomic_write_text(file_path: PathLike, text: str) -> None:
    """
    Write text atomically: write a sibling temp file, then rename it over the target.

    Raises:
        RetryableWriteError: if the rename fails (retried with backoff)
        FileOperationError: if the temp file cannot be written
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = file_path.with_suffix(file_path.suffix + ".tmp")

    try:
        with open(temp_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
    except OSError as e:
        raise FileOperationError(f"Failed to write {file_path}: {e}") from e

    try:
        temp_path.replace(file_path)
    except OSError as e:
        if temp_path.exists():
            try:
                temp_path.unlink()
            except OSError:
                pass
        raise RetryableWriteError(f"Failed to move {temp_path} to {file_path}: {e}") from e


def atomic_write_json(file_path: PathLike, data: Any) -> None:
    """Write JSON data atomically with stable key order."""
    atomic_write_text(file_path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False, default=str) + "\n")


def format_matrix(matrix: np.ndarray) -> str:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise InvalidArgumentError(f"only 1-D or 2-D arrays can be saved, got {matrix.ndim}-D")
    rows, cols = matrix.shape
    lines = [f"{rows},{cols}"]
    # repr of a Python float is the shortest decimal that round-trips exactly
    lines.extend(",".join(repr(value) for value in row) for row in matrix.tolist())
    return "\n".join(lines) + "\n"


def parse_matrix(text: str, source: str = "<text>") -> np.ndarray:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise MatrixFormatError(f"{source}: empty matrix file")

    header = lines[0].split(",")
    try:
        rows, cols = (int(token) for token in header)
    except ValueError:
        raise MatrixFormatError(f"{source}: malformed header {lines[0]!r}, expected 'rows,cols'")
    if rows < 0 or cols < 0:
        raise MatrixFormatError(f"{source}: negative dimensions in header {lines[0]!r}")

    body = lines[1:]
    if len(body) != rows:
        raise MatrixFormatError(f"{source}: header declares {rows} rows but file holds {len(body)}")

    matrix = np.empty((rows, cols), dtype=np.float64)
    for i, line in enumerate(body):
        tokens = line.split(",")
        if len(tokens) != cols:
            raise MatrixFormatError(f"{source}: row {i} holds {len(tokens)} values, expected {cols}")
        try:
            matrix[i] = [float(token) for token in tokens]
        except ValueError as e:
            raise MatrixFormatError(f"{source}: non-numeric token in row {i}: {e}")
    return matrix


def save_matrix(path: PathLike, matrix: np.ndarray) -> None:
    """Save a matrix (vectors are stored as a single row)."""
    atomic_write_text(path, format_matrix(matrix))
    logger.debug(f"Saved matrix {np.shape(matrix)} to {path}")


def load_matrix(path: PathLike) -> np.ndarray:
    """Load a matrix written by save_matrix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Matrix file not found: {path}")
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise FileOperationError(f"Failed to read {path}: {e}") from e
    return parse_matrix(text, source=str(path))


def _read_metadata(meta_path: Path, what: str) -> Dict[str, Any]:
    if not meta_path.exists():
        raise FileNotFoundError(f"{what} metadata not found: {meta_path}")
    try:
        metadata = json.loads(meta_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise FileOperationError(f"Invalid JSON in {meta_path}: {e}") from e
    if not isinstance(metadata, dict):
        raise FileOperationError(f"{meta_path}: expected a JSON object, got {type(metadata).__name__}")
    return metadata


def save_dataset(directory: PathLike, dictionary: Dictionary, X: np.ndarray,
                 metadata: Dict[str, Any], Z_true: Optional[np.ndarray] = None) -> Path:
    """
    Write a dataset bundle: dataset.json plus D.csv, X.csv (samples as
    columns) and optionally Z_true.csv (codes as columns).

    X and Z_true are given with one sample per row.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "D.csv", dictionary.entries)
    save_matrix(directory / "X.csv", np.atleast_2d(X).T)
    files = {"D": "D.csv", "X": "X.csv"}
    if Z_true is not None:
        save_matrix(directory / "Z_true.csv", np.atleast_2d(Z_true).T)
        files["Z_true"] = "Z_true.csv"

    meta = {
        "kind": dictionary.kind,
        "n": dictionary.n,
        "m": dictionary.m,
        "seed": dictionary.seed,
    }
    meta.update(metadata)
    meta["files"] = files
    atomic_write_json(directory / "dataset.json", meta)
    logger.info(f"Saved dataset with {np.atleast_2d(X).shape[0]} samples to {directory}")
    return directory


def load_dataset(directory: PathLike) -> Dict[str, Any]:
    """
    Load a dataset bundle.

    Returns:
        dict with keys "metadata", "dictionary", "X" (one sample per row) and
        optionally "Z_true" (one code per row)
    """
    directory = Path(directory)
    meta_path = directory / "dataset.json"
    metadata = _read_metadata(meta_path, "Dataset")
    try:
        return _dataset_from_metadata(directory, metadata)
    except SparseLabError:
        raise
    except MALFORMED_METADATA as e:
        raise FileOperationError(f"{meta_path}: malformed dataset description ({type(e).__name__}: {e})") from e


def _dataset_from_metadata(directory: Path, metadata: Dict[str, Any]) -> Dict[str, Any]:
    files = metadata.get("files", {"D": "D.csv", "X": "X.csv"})
    dictionary = Dictionary.from_matrix(load_matrix(directory / files["D"]),
                                        kind=metadata.get("kind", "user_supplied"),
                                        seed=metadata.get("seed"))
    bundle = {
        "metadata": metadata,
        "dictionary": dictionary,
        "X": load_matrix(directory / files["X"]).T,
    }
    if "Z_true" in files:
        bundle["Z_true"] = load_matrix(directory / files["Z_true"]).T
    return bundle


def save_model(directory: PathLike, params: NetworkParams, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Serialize network parameters as model.json plus one matrix file per layer tensor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layer_files = []
    for k, layer in enumerate(params.layers):
        entry = {}
        for name in LAYER_FIELDS[params.kind]:
            filename = f"layer{k:03d}_{name}.csv"
            save_matrix(directory / filename, getattr(layer, name))
            entry[name] = filename
        layer_files.append(entry)

    meta = {
        "kind": params.kind,
        "depth": params.depth,
        "lambda": params.lam,
        "mu": params.mu,
        "layers": layer_files,
    }
    if extra:
        meta.update(extra)
    atomic_write_json(directory / "model.json", meta)
    return directory


def load_model(directory: PathLike) -> NetworkParams:
    """Load network parameters written by save_model."""
    directory = Path(directory)
    meta_path = directory / "model.json"
    meta = _read_metadata(meta_path, "Model")
    try:
        return _model_from_metadata(directory, meta)
    except SparseLabError:
        raise
    except MALFORMED_METADATA as e:
        raise FileOperationError(f"{meta_path}: malformed model description ({type(e).__name__}: {e})") from e


def _model_from_metadata(directory: Path, meta: Dict[str, Any]) -> NetworkParams:
    kind = meta["kind"]
    if kind not in LAYER_TYPES:
        raise FileOperationError(f"{directory / 'model.json'}: unknown model kind {kind!r}")

    layers = []
    for entry in meta["layers"]:
        values = {}
        for name in LAYER_FIELDS[kind]:
            matrix = load_matrix(directory / entry[name])
            # vectors were stored as single rows
            values[name] = matrix.ravel() if name in ("theta", "s") else matrix
        layers.append(LAYER_TYPES[kind](**values))
    return NetworkParams(kind=kind, layers=layers, lam=float(meta["lambda"]), mu=float(meta.get("mu", 0.0)))
