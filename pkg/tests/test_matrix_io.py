"""
Tests for matrix files and dataset/model bundles.
"""
import json
import shutil
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from src.exceptions import MatrixFormatError, FileOperationError, InvalidArgumentError, RetryableWriteError
from src.lasso_core import sample_gaussian_dictionary
from src.matrix_io import (
    atomic_write_text, atomic_write_json, save_matrix, load_matrix, parse_matrix,
    save_dataset, load_dataset, save_model, load_model
)
from src.networks import init_network


class TestMatrixFiles:

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_exact_roundtrip(self):
        rng = np.random.default_rng(0)
        matrix = rng.standard_normal((4, 7)) * 10.0 ** rng.integers(-20, 20, size=(4, 7))
        path = Path(self.temp_dir) / "m.csv"
        save_matrix(path, matrix)
        np.testing.assert_array_equal(load_matrix(path), matrix)

    def test_header_and_layout(self):
        path = Path(self.temp_dir) / "m.csv"
        save_matrix(path, np.array([[1.0, 0.5], [0.1, -2.0], [3.0, 4.0]]))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "3,2"
        assert lines[2] == "0.1,-2.0"
        assert len(lines) == 4

    def test_vectors_stored_as_row(self):
        path = Path(self.temp_dir) / "v.csv"
        save_matrix(path, np.arange(3.0))
        assert load_matrix(path).shape == (1, 3)

    def test_rejects_3d(self):
        with pytest.raises(InvalidArgumentError):
            save_matrix(Path(self.temp_dir) / "x.csv", np.ones((2, 2, 2)))

    @pytest.mark.parametrize("text", [
        "",
        "two,three\n1,2,3\n",
        "2,2\n1,2\n",
        "1,2\n1,2,3\n",
        "1,2\n1,abc\n",
    ])
    def test_malformed_files(self, text):
        with pytest.raises(MatrixFormatError):
            parse_matrix(text)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_matrix(Path(self.temp_dir) / "absent.csv")

    def test_atomic_write_leaves_no_temp_file(self):
        path = Path(self.temp_dir) / "out" / "data.json"
        atomic_write_json(path, {"b": 1, "a": [1, 2]})
        assert path.exists()
        assert not path.with_suffix(".json.tmp").exists()
        assert path.read_text(encoding="utf-8").index('"a"') < path.read_text(encoding="utf-8").index('"b"')

    def test_atomic_write_retries_failed_rename(self):
        path = Path(self.temp_dir) / "retry.txt"
        original_replace = Path.replace
        calls = {"n": 0}

        def flaky_replace(self_path, target):
            calls["n"] += 1
            if calls["n"] == 1:
                raise OSError("target locked")
            return original_replace(self_path, target)

        with patch.object(Path, "replace", flaky_replace), patch("time.sleep"):
            atomic_write_text(path, "content\n")
        assert path.read_text(encoding="utf-8") == "content\n"
        assert calls["n"] == 2

    def test_atomic_write_gives_up(self):
        path = Path(self.temp_dir) / "locked.txt"

        def always_fail(self_path, target):
            raise OSError("target locked")

        with patch.object(Path, "replace", always_fail), patch("time.sleep"):
            with pytest.raises(RetryableWriteError):
                atomic_write_text(path, "content\n")
        assert not path.exists()


class TestBundles:

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()
        self.dictionary = sample_gaussian_dictionary(5, 8, seed=3)

    def teardown_method(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_dataset_roundtrip(self):
        rng = np.random.default_rng(1)
        Z = rng.standard_normal((6, 8))
        X = Z @ self.dictionary.entries.T
        save_dataset(self.temp_dir, self.dictionary, X, {"rho": 0.1, "sigma": 1.0, "lambda": 0.01}, Z_true=Z)

        bundle = load_dataset(self.temp_dir)
        np.testing.assert_array_equal(bundle["X"], X)
        np.testing.assert_array_equal(bundle["Z_true"], Z)
        np.testing.assert_allclose(bundle["dictionary"].entries, self.dictionary.entries, atol=1e-15)
        assert bundle["metadata"]["rho"] == 0.1
        assert bundle["metadata"]["kind"] == "gaussian"
        # samples are stored as columns
        assert load_matrix(Path(self.temp_dir) / "X.csv").shape == (5, 6)

    def test_dataset_missing_metadata(self):
        with pytest.raises(FileNotFoundError):
            load_dataset(self.temp_dir)

    def test_dataset_bad_json(self):
        (Path(self.temp_dir) / "dataset.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(FileOperationError):
            load_dataset(self.temp_dir)

    @pytest.mark.parametrize("kind", ["lista", "lfista", "facnet"])
    def test_model_roundtrip(self, kind):
        params = init_network(kind, self.dictionary, 0.05, 3, mu=0.5)
        save_model(Path(self.temp_dir) / kind, params, extra={"cell": f"{kind}_K3"})
        loaded = load_model(Path(self.temp_dir) / kind)

        assert loaded.kind == kind
        assert loaded.depth == 3
        assert loaded.lam == 0.05
        assert loaded.mu == params.mu
        for original, restored in zip(params.layers, loaded.layers):
            for name, value in vars(original).items():
                np.testing.assert_array_equal(getattr(restored, name), value)

    def test_model_unknown_kind(self):
        params = init_network("lista", self.dictionary, 0.05, 1)
        directory = save_model(Path(self.temp_dir) / "m", params)
        meta = (directory / "model.json").read_text(encoding="utf-8").replace('"lista"', '"alista"')
        (directory / "model.json").write_text(meta, encoding="utf-8")
        with pytest.raises(FileOperationError):
            load_model(directory)

    def _model_meta(self):
        params = init_network("facnet", self.dictionary, 0.05, 2)
        directory = save_model(Path(self.temp_dir) / "m", params)
        return directory, json.loads((directory / "model.json").read_text(encoding="utf-8"))

    @pytest.mark.parametrize("field", ["kind", "layers", "lambda"])
    def test_model_missing_field(self, field):
        directory, meta = self._model_meta()
        del meta[field]
        (directory / "model.json").write_text(json.dumps(meta), encoding="utf-8")
        with pytest.raises(FileOperationError, match="malformed model"):
            load_model(directory)

    @pytest.mark.parametrize("change", [
        {"layers": [{"A": "layer000_A.csv"}]},
        {"layers": 3},
        {"lambda": "small"},
    ])
    def test_model_mistyped_field(self, change):
        directory, meta = self._model_meta()
        meta.update(change)
        (directory / "model.json").write_text(json.dumps(meta), encoding="utf-8")
        with pytest.raises(FileOperationError):
            load_model(directory)

    @pytest.mark.parametrize("meta", [
        [1, 2],
        {"files": {"X": "X.csv"}},
        {"files": {"D": 5, "X": "X.csv"}},
        {"files": "D.csv"},
    ])
    def test_dataset_malformed_metadata(self, meta):
        save_dataset(self.temp_dir, self.dictionary, np.zeros((2, 5)), {})
        (Path(self.temp_dir) / "dataset.json").write_text(json.dumps(meta), encoding="utf-8")
        with pytest.raises(FileOperationError):
            load_dataset(self.temp_dir)
