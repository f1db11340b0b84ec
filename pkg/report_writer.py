#!/usr/bin/env python3
"""
Excel design report.
Workbook with the per-row verdicts at a checked point, the regeneration check
and per-period tracking error of a simulation run.
"""

import math

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side

THIN = Side(style="thin")
PASS_FILL = PatternFill(start_color="C6EFCE", end_color="C6EFCE", fill_type="solid")
FAIL_FILL = PatternFill(start_color="FFC7CE", end_color="FFC7CE", fill_type="solid")


class DesignReportWriter:
    """Generate a formatted workbook for one design run"""

    def __init__(self, output_path="report.xlsx", config_hash=""):
        """
        Initialize report writer.

        Args:
            output_path (str): Path to save the workbook
            config_hash (str): Hash of the config the run was made with
        """
        self.output_path = output_path
        self.config_hash = config_hash
        self.wb = Workbook()
        # Remove default sheet
        if "Sheet" in self.wb.sheetnames:
            self.wb.remove(self.wb["Sheet"])

    def _apply_header_style(self, cell):
        cell.font = Font(bold=True, size=11, color="FFFFFF")
        cell.fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
        cell.alignment = Alignment(horizontal="center", vertical="center")
        cell.border = Border(left=THIN, right=THIN, top=THIN, bottom=THIN)

    def _apply_data_style(self, cell, is_number=False):
        cell.alignment = Alignment(horizontal="right" if is_number else "left", vertical="center")
        cell.border = Border(left=THIN, right=THIN, top=THIN, bottom=THIN)

    def _start_sheet(self, name, title, subtitle, headers, widths):
        ws = self.wb.create_sheet(name)
        ws["A1"] = title
        ws["A1"].font = Font(bold=True, size=14)
        ws["A2"] = subtitle
        ws["A3"] = f"Config hash: {self.config_hash}"
        for col_num, header in enumerate(headers, 1):
            self._apply_header_style(ws.cell(row=5, column=col_num, value=header))
        for col_num, width in enumerate(widths, 1):
            ws.column_dimensions[chr(ord("A") + col_num - 1)].width = width
        ws.freeze_panes = "A6"
        return ws

    def _write_row(self, ws, row, values, formats):
        for col_num, (value, fmt) in enumerate(zip(values, formats), 1):
            if isinstance(value, float) and not math.isfinite(value):
                value = str(value)
            cell = ws.cell(row=row, column=col_num, value=value)
            if fmt and not isinstance(value, str):
                cell.number_format = fmt
            self._apply_data_style(cell, is_number=not isinstance(value, str))

    def add_schedule_sheet(self, point, report):
        """
        Per-row verdicts of the membership check.

        Args:
            point (tuple): Checked (p1, p2)
            report (MembershipReport): Oracle result
        """
        ws = self._start_sheet(
            "Schedule", "DESIGN CHECK",
            f"Point: p1={point[0]:.6g}, p2={point[1]:.6g} - verdict {'PASS' if report.verdict else 'FAIL'}",
            ["k", "Frequency [Hz]", "Band", "|Ws||S| + |Wt||T|", "Result", "Diagnostic"],
            [6, 16, 8, 20, 10, 30],
        )
        row = 6
        for entry in report.rows:
            self._write_row(
                ws, row,
                [entry.k, entry.omega / (2.0 * math.pi), entry.band, entry.value,
                 "PASS" if entry.passed else "FAIL", entry.diagnostic],
                [None, "#,##0.00", None, "0.000000", None, None],
            )
            ws.cell(row=row, column=5).fill = PASS_FILL if entry.passed else FAIL_FILL
            row += 1

    def add_regen_sheet(self, regen):
        """
        Regeneration check summary.

        Args:
            regen (dict): passed, worst_value, worst_omega, epsilon
        """
        ws = self._start_sheet(
            "Regeneration", "REGENERATION CHECK", "Sufficient stability condition R < 1 - epsilon",
            ["Quantity", "Value"], [24, 18],
        )
        rows = [
            ("Result", "PASS" if regen["passed"] else "FAIL"),
            ("epsilon", regen["epsilon"]),
            ("Worst R", regen["worst_value"]),
            ("Worst frequency [Hz]", regen["worst_omega"] / (2.0 * math.pi)),
            ("Margin", 1.0 - regen["epsilon"] - regen["worst_value"]),
        ]
        for row, (name, value) in enumerate(rows, 6):
            self._write_row(ws, row, [name, value], [None, "0.000000"])
        ws.cell(row=6, column=2).fill = PASS_FILL if regen["passed"] else FAIL_FILL

    def add_period_sheet(self, metrics, baseline=None):
        """
        Tracking error per reference period.

        Args:
            metrics (list[PeriodMetric]): Repetitive loop enabled
            baseline (list[PeriodMetric], optional): Repetitive loop disabled
        """
        headers = ["Period", "RMS error", "Peak error"]
        if baseline:
            headers += ["RMS (q_p = 0)", "Peak (q_p = 0)"]
        ws = self._start_sheet("Period Metrics", "TRACKING ERROR PER PERIOD", "Reference tracking run",
                               headers, [8, 16, 16, 16, 16])
        for i, m in enumerate(metrics):
            values = [m.index, m.rms_error, m.peak_error]
            if baseline and i < len(baseline):
                values += [baseline[i].rms_error, baseline[i].peak_error]
            self._write_row(ws, 6 + i, values, [None] + ["0.000E+00"] * 4)

    def save(self):
        """Save the workbook to file"""
        self.wb.save(self.output_path)
        return self.output_path
