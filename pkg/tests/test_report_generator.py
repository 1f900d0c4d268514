"""
Unit tests for report_generator module.
"""
import json
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
import pandas as pd
from openpyxl import load_workbook

from src.exceptions import ReportGenerationError
from src.lasso_core import sample_gaussian_dictionary
from src.matrix_io import load_model, load_matrix
from src.models import (
    ResultRow, ResultTable, SolverTrace, MCReport, GapEstimate, GapTraceTable, ExperimentArtifacts,
    LinearBaseline, BoundReport
)
from src.networks import init_network
from src.report_generator import ReportGenerator, RESULT_COLUMNS


class TestReportGenerator:
    """Test cases for ReportGenerator class."""

    @pytest.fixture
    def temp_dir(self):
        """Create temporary directory for testing."""
        with tempfile.TemporaryDirectory() as temp_dir:
            yield temp_dir

    @pytest.fixture
    def report_generator(self, temp_dir):
        """Create ReportGenerator instance with temporary directory."""
        return ReportGenerator(temp_dir)

    @pytest.fixture
    def sample_table(self):
        """Two methods at two depths, inserted out of order."""
        table = ResultTable()
        for method, depth, gap in [("lista", 1, 0.2), ("ista", 1, 0.4), ("ista", 0, 1.0), ("lista", 0, 1.0)]:
            table.add(ResultRow(setting="gaussian_rho=0.05", method=method, depth=depth,
                                mean_cost_gap=gap, std_error=0.01, n_samples=100))
        table.summary["ratios"] = {"gaussian_rho=0.05": {"lista/ista": {"0": 1.0, "1": 0.5}}}
        return table

    def test_output_dir_created(self, temp_dir):
        target = Path(temp_dir) / "deep" / "run"
        ReportGenerator(str(target))
        assert target.is_dir()

    def test_write_result_table(self, report_generator, sample_table, temp_dir):
        path = report_generator.write_result_table(sample_table)

        frame = pd.read_csv(path)
        assert list(frame.columns) == RESULT_COLUMNS
        assert list(zip(frame["method"], frame["depth"])) == [("ista", 0), ("ista", 1), ("lista", 0), ("lista", 1)]
        with open(Path(temp_dir) / "summary.json") as f:
            assert json.load(f)["ratios"]["gaussian_rho=0.05"]["lista/ista"]["1"] == 0.5

    def test_identical_tables_give_identical_bytes(self, temp_dir, sample_table):
        a = ReportGenerator(str(Path(temp_dir) / "a")).write_result_table(sample_table)
        b = ReportGenerator(str(Path(temp_dir) / "b")).write_result_table(sample_table)
        assert a.read_bytes() == b.read_bytes()

    def test_write_result_table_failure(self, report_generator, sample_table):
        with patch("src.report_generator.atomic_write_text", side_effect=OSError("disk full")):
            with pytest.raises(ReportGenerationError):
                report_generator.write_result_table(sample_table)

    def test_write_trace(self, report_generator):
        trace = SolverTrace(method="ista", costs=[3.0, 2.0, 1.5], support_sizes=[0.0, 4.0, 3.0], final=np.zeros(5))
        frame = pd.read_csv(report_generator.write_trace(trace))
        assert list(frame.columns) == ["iteration", "cost", "cost_gap", "support_size"]
        assert list(frame["iteration"]) == [0, 1, 2]
        assert list(frame["cost"]) == [3.0, 2.0, 1.5]
        assert frame["cost_gap"].isna().all()

    def test_write_trace_gap_against_mean_reference(self, report_generator):
        trace = SolverTrace(method="fista", costs=[3.0, 2.0, 1.5], support_sizes=[0.0, 4.0, 3.0], final=np.zeros(5))
        frame = pd.read_csv(report_generator.write_trace(trace, f_star=np.array([1.0, 1.5])))
        np.testing.assert_allclose(frame["cost_gap"], [1.75, 0.75, 0.25])

    def test_write_bound_reports(self, report_generator, temp_dir):
        reports = [BoundReport(name="prop1", lhs=0.1, rhs=0.3, terms={"residual_norm": 0.0}),
                   BoundReport(name="theorem1", lhs=0.5, rhs=0.2, precondition_ok=False)]
        path = report_generator.write_bound_reports(reports)
        assert path == Path(temp_dir) / "bounds.json"
        with open(path) as f:
            written = json.load(f)
        assert [r["name"] for r in written] == ["prop1", "theorem1"]
        assert [r["satisfied"] for r in written] == [True, False]
        assert written[0]["terms"] == {"residual_norm": 0.0}

    def test_write_mc_reports(self, report_generator, temp_dir):
        reports = [
            MCReport(name="wishart_frobenius", estimate=58.1, std_error=0.3, reference=58.0, trials=2000,
                     within_tolerance=True, params={"K": 20, "p": 10}),
            MCReport(name="unitarity", estimate=0.7, std_error=0.01, reference=1.0, trials=100,
                     within_tolerance=True, extra={"max_ratio": 0.8}),
        ]
        frame = pd.read_csv(report_generator.write_mc_reports(reports))
        assert list(frame["name"]) == ["wishart_frobenius", "unitarity"]
        assert frame.loc[0, "param_K"] == 20
        with open(Path(temp_dir) / "mc_reports.json") as f:
            saved = json.load(f)
        assert saved[1]["extra"] == {"max_ratio": 0.8}

    def test_write_gap_estimates(self, report_generator):
        estimates = [GapEstimate(lhs=0.0, rhs=1.0, margin=1.0, holds=True),
                     GapEstimate(lhs=0.5, rhs=0.25, margin=-0.25, holds=False)]
        frame = pd.read_csv(report_generator.write_gap_estimates(estimates))
        assert list(frame["iteration"]) == [0, 1]
        assert list(frame["holds"]) == [True, False]

    def test_write_gap_table(self, report_generator, temp_dir):
        table = GapTraceTable(rows=[{"dictionary": "gaussian", "iteration": 0, "mean_margin": 1.0}],
                              summary={"gaussian_above_adversarial": True})
        report_generator.write_gap_table(table)
        assert (Path(temp_dir) / "gap_trace.csv").exists()
        with open(Path(temp_dir) / "gap_summary.json") as f:
            assert json.load(f) == {"gaussian_above_adversarial": True}

    def test_write_artifacts(self, report_generator, temp_dir):
        dictionary = sample_gaussian_dictionary(4, 6, seed=0)
        params = init_network("facnet", dictionary, 0.1, 2)
        artifacts = ExperimentArtifacts(
            models={"gaussian_rho=0.05/facnet_K2": params},
            curves={"gaussian_rho=0.05/facnet_K2": [{"step": 0, "depth": 2, "train_loss": 1.0,
                                                         "validation_cost": 2.0, "test_cost_gap": 0.5}]},
            baselines={"gaussian_rho=0.05": LinearBaseline(A0=np.ones((6, 4)))},
        )
        report_generator.write_artifacts(artifacts)

        model_dir = Path(temp_dir) / "models" / "gaussian_rho0.05__facnet_K2"
        loaded = load_model(model_dir)
        assert loaded.kind == "facnet" and loaded.depth == 2
        curve = pd.read_csv(Path(temp_dir) / "curves" / "gaussian_rho0.05__facnet_K2.csv")
        assert list(curve.columns) == ["step", "depth", "train_loss", "validation_cost", "test_cost_gap"]
        assert curve["validation_cost"].iloc[0] == 2.0
        np.testing.assert_array_equal(load_matrix(Path(temp_dir) / "models" / "gaussian_rho0.05" / "linear_A0.csv"),
                                      np.ones((6, 4)))

    def test_write_workbook(self, report_generator, sample_table):
        path = report_generator.write_workbook(sample_table)

        wb = load_workbook(path)
        assert wb.sheetnames == ["Results", "Learned vs classic"]
        results = wb["Results"]
        assert [cell.value for cell in results[1]] == RESULT_COLUMNS
        assert results.max_row == 5
        ratios = wb["Learned vs classic"]
        assert [cell.value for cell in ratios[3]] == ["gaussian_rho=0.05", "lista/ista", 1, 0.5]

    def test_write_workbook_without_ratios(self, report_generator, sample_table):
        sample_table.summary = {}
        wb = load_workbook(report_generator.write_workbook(sample_table))
        assert wb.sheetnames == ["Results"]

    def test_write_workbook_failure_is_not_fatal(self, report_generator, sample_table):
        with patch.object(ReportGenerator, "_create_excel_workbook", side_effect=OSError("locked")):
            assert report_generator.write_workbook(sample_table) is None
        assert report_generator.error_handler.get_error_summary()["total_errors"] == 1

    def test_write_resolved_config(self, report_generator):
        path = report_generator.write_resolved_config({"seed": 1})
        assert path.name == "config.resolved.json"
        with open(path) as f:
            assert json.load(f) == {"seed": 1}
        assert path in report_generator.written
