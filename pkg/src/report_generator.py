"""
Result emission for the Sparse Splitting Lab.
Writes result tables, traces, Monte-Carlo reports and trained models as CSV/JSON,
plus an optional formatted Excel workbook.

CSV files carry no timestamps, so identical runs produce identical bytes.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill, Alignment, Border, Side

try:
    from .models import (
        ResultTable, SolverTrace, MCReport, GapTraceTable, GapEstimate, BoundReport, ExperimentArtifacts,
        result_row_to_dict, mc_report_to_dict, gap_estimate_to_dict, bound_report_to_dict
    )
    from .exceptions import ReportGenerationError
    from .error_handler import ErrorHandler, create_error_context, safe_execute
    from .matrix_io import atomic_write_text, atomic_write_json, save_model, save_matrix
except ImportError:
    from models import (
        ResultTable, SolverTrace, MCReport, GapTraceTable, GapEstimate, BoundReport, ExperimentArtifacts,
        result_row_to_dict, mc_report_to_dict, gap_estimate_to_dict, bound_report_to_dict
    )
    from exceptions import ReportGenerationError
    from error_handler import ErrorHandler, create_error_context, safe_execute
    from matrix_io import atomic_write_text, atomic_write_json, save_model, save_matrix


logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["setting", "method", "depth", "mean_cost_gap", "std_error", "n_samples", "status"]
CURVE_COLUMNS = ["step", "depth", "train_loss", "validation_cost", "test_cost_gap"]

HEADER_FILL = PatternFill(start_color="2F5597", end_color="2F5597", fill_type="solid")
HEADER_FONT = Font(color="FFFFFF", bold=True, size=11)
STRIPE_FILL = PatternFill(start_color="F8F9FA", end_color="F8F9FA", fill_type="solid")
THIN_BORDER = Border(
    left=Side(style='thin', color='D0D0D0'),
    right=Side(style='thin', color='D0D0D0'),
    top=Side(style='thin', color='D0D0D0'),
    bottom=Side(style='thin', color='D0D0D0')
)


def _key_to_dirname(key: str) -> str:
    return key.replace("/", "__").replace("=", "")


class ReportGenerator:
    """Writes every output of a run under one directory."""

    def __init__(self, output_dir: str = "results"):
        """
        Initialize the report generator.

        Args:
            output_dir: Directory where outputs will be stored
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.error_handler = ErrorHandler(max_retries=2, base_delay=0.1)
        self.written: List[Path] = []
        logger.info(f"ReportGenerator initialized with output dir: {output_dir}")

    def _write_frame(self, frame: pd.DataFrame, filename: str) -> Path:
        path = self.output_dir / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))
        self.written.append(path)
        return path

    def _write_json(self, data: Any, filename: str) -> Path:
        path = self.output_dir / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_json(path, data)
        self.written.append(path)
        return path

    def write_result_table(self, table: ResultTable, filename: str = "results.csv") -> Path:
        """
        Write the comparison table (sorted by setting, method, depth) and its summary.

        Raises:
            ReportGenerationError: if the table cannot be written
        """
        context = create_error_context("write_result_table", additional_info={"rows": len(table.rows)})
        try:
            frame = pd.DataFrame([result_row_to_dict(row) for row in table.rows], columns=RESULT_COLUMNS)
            frame = frame.sort_values(["setting", "method", "depth"], kind="mergesort").reset_index(drop=True)
            path = self._write_frame(frame, filename)
            if table.summary:
                self._write_json(table.summary, "summary.json")
            logger.info(f"Wrote {len(frame)} result rows to {path}")
            return path
        except Exception as e:
            self.error_handler.handle_error(e, context, critical=True)
            raise ReportGenerationError(f"Failed to write result table: {e}") from e

    def write_trace(self, trace: SolverTrace, filename: str = "trace.csv",
                    f_star: Optional[Union[float, np.ndarray]] = None) -> Path:
        """
        Per-iteration cost, cost gap and support size of a solver run.

        cost_gap is cost - mean F(z*) over the signals, nan when f_star is not given.
        """
        costs = np.asarray(trace.costs, dtype=np.float64)
        reference = float(np.mean(f_star)) if f_star is not None else np.nan
        frame = pd.DataFrame({
            "iteration": range(len(costs)),
            "cost": costs,
            "cost_gap": costs - reference,
            "support_size": trace.support_sizes,
        })
        path = self._write_frame(frame, filename)
        logger.info(f"Wrote {trace.method} trace with {trace.iterations} iterations to {path}")
        return path

    def write_mc_reports(self, reports: List[MCReport], stem: str = "mc_reports") -> Path:
        """Monte-Carlo reports as a flat CSV plus the full JSON (params and extras)."""
        rows = []
        for report in reports:
            row = {
                "name": report.name,
                "estimate": report.estimate,
                "std_error": report.std_error,
                "reference": report.reference,
                "trials": report.trials,
                "within_tolerance": report.within_tolerance,
                "criterion": report.criterion,
            }
            row.update({f"param_{k}": str(v) for k, v in sorted(report.params.items())})
            rows.append(row)
        path = self._write_frame(pd.DataFrame(rows), f"{stem}.csv")
        self._write_json([mc_report_to_dict(report) for report in reports], f"{stem}.json")
        return path

    def write_gap_table(self, table: GapTraceTable, filename: str = "gap_trace.csv") -> Path:
        path = self._write_frame(pd.DataFrame(table.rows), filename)
        self._write_json(table.summary, "gap_summary.json")
        return path

    def write_gap_estimates(self, estimates: List[GapEstimate], filename: str = "gap.csv") -> Path:
        """One row per iteration of a single gap trace."""
        frame = pd.DataFrame([gap_estimate_to_dict(g) for g in estimates])
        frame.insert(0, "iteration", range(len(estimates)))
        return self._write_frame(frame, filename)

    def write_bound_reports(self, reports: List[BoundReport], filename: str = "bounds.json") -> Path:
        return self._write_json([bound_report_to_dict(report) for report in reports], filename)

    def write_resolved_config(self, config: Dict[str, Any]) -> Path:
        return self._write_json(config, "config.resolved.json")

    def write_artifacts(self, artifacts: ExperimentArtifacts) -> None:
        """Trained models under models/<cell>/, training curves under curves/<cell>.csv."""
        for key, params in sorted(artifacts.models.items()):
            directory = self.output_dir / "models" / _key_to_dirname(key)
            save_model(directory, params, extra={"cell": key})
            self.written.append(directory / "model.json")
        for key, curve in sorted(artifacts.curves.items()):
            frame = pd.DataFrame(curve, columns=CURVE_COLUMNS)
            self._write_frame(frame, f"curves/{_key_to_dirname(key)}.csv")
        for key, baseline in sorted(artifacts.baselines.items()):
            path = self.output_dir / "models" / _key_to_dirname(key) / "linear_A0.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_matrix(path, baseline.A0)
            self.written.append(path)
        logger.info(f"Wrote {len(artifacts.models)} models and {len(artifacts.curves)} training curves")

    def write_workbook(self, table: ResultTable, filename: str = "results.xlsx") -> Optional[Path]:
        """Formatted summary workbook; failures are logged and never abort a run."""
        path = self.output_dir / filename
        done = safe_execute(
            self._create_excel_workbook,
            table,
            path,
            default_return=False,
            error_handler=self.error_handler,
            context=create_error_context("write_workbook", additional_info={"file": filename})
        )
        return path if done else None

    def _create_excel_workbook(self, table: ResultTable, excel_path: Path) -> bool:
        wb = Workbook()
        wb.remove(wb.active)
        self._create_results_sheet(wb, table)
        self._create_ratio_sheet(wb, table)
        wb.save(excel_path)
        logger.info(f"Wrote workbook {excel_path}")
        return True

    def _style_header(self, ws) -> None:
        for cell in ws[1]:
            cell.fill = HEADER_FILL
            cell.font = HEADER_FONT
            cell.alignment = Alignment(horizontal="center", vertical="center")

    def _create_results_sheet(self, wb: Workbook, table: ResultTable) -> None:
        ws = wb.create_sheet("Results")
        ws.append(RESULT_COLUMNS)
        self._style_header(ws)

        rows = sorted(table.rows, key=lambda r: (r.setting, r.method, r.depth))
        for row_idx, row in enumerate(rows, start=2):
            values = result_row_to_dict(row)
            ws.append([values[c] for c in RESULT_COLUMNS])
            for col_idx in range(1, len(RESULT_COLUMNS) + 1):
                cell = ws.cell(row=row_idx, column=col_idx)
                if row_idx % 2 == 0:
                    cell.fill = STRIPE_FILL
                cell.border = THIN_BORDER
                if RESULT_COLUMNS[col_idx - 1] in ("mean_cost_gap", "std_error"):
                    cell.number_format = "0.000E+00"
            if row.status != "ok":
                ws.cell(row=row_idx, column=len(RESULT_COLUMNS)).font = Font(bold=True, color="D32F2F")

        for letter, width in zip("ABCDEFG", (28, 10, 8, 16, 14, 12, 10)):
            ws.column_dimensions[letter].width = width

    def _create_ratio_sheet(self, wb: Workbook, table: ResultTable) -> None:
        ratios = table.summary.get("ratios", {})
        if not ratios:
            return
        ws = wb.create_sheet("Learned vs classic")
        ws.append(["setting", "pair", "depth", "gap ratio"])
        self._style_header(ws)
        for setting in sorted(ratios):
            for pair in sorted(ratios[setting]):
                for depth, value in sorted(ratios[setting][pair].items(), key=lambda kv: int(kv[0])):
                    ws.append([setting, pair, int(depth), value])
                    cell = ws.cell(row=ws.max_row, column=4)
                    cell.number_format = "0.000"
                    # green when the learned network beats its classic counterpart
                    cell.font = Font(bold=True, color="2E7D32" if value < 1.0 else "757575")
        for letter, width in zip("ABCD", (28, 16, 8, 12)):
            ws.column_dimensions[letter].width = width
