"""
Report Generator Service
Writes evaluation tables as CSV, summary JSON and an Excel workbook
"""

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from ..database.file_store import atomic_write_text
from ..models import EvalRecord
from .evaluation_service import SUMMARY_KEYS

CSV_COLUMNS = (
    "instance_id", "category",
    "gt_qw", "gt_qx", "gt_qy", "gt_qz", "gt_tx", "gt_ty", "gt_tz", "gt_scale", "gt_ex", "gt_ey", "gt_ez",
    "pred_qw", "pred_qx", "pred_qy", "pred_qz", "pred_tx", "pred_ty", "pred_tz", "pred_scale",
    "pred_ex", "pred_ey", "pred_ez",
    "rotation_error_deg", "translation_error_cm", "iou", "cd", "symmetry",
)
TEXT_COLUMNS = ("instance_id", "category", "symmetry")
NUMERIC_COLUMNS = tuple(c for c in CSV_COLUMNS if c not in TEXT_COLUMNS)


def record_row(record: EvalRecord) -> Dict[str, Any]:
    """One CSV row; every float is written with repr so it reads back bit-exact."""
    values = (
        list(record.gt_pose.rotation) + list(record.gt_pose.translation) + [record.gt_scale] + list(record.gt_extents)
        + list(record.pred_pose.rotation) + list(record.pred_pose.translation) + [record.pred_scale]
        + list(record.pred_extents)
        + [record.rotation_error_deg, record.translation_error_cm, record.iou, record.cd]
    )
    row = {"instance_id": record.instance_id, "category": record.category, "symmetry": record.symmetry or ""}
    row.update({name: repr(float(v)) for name, v in zip(NUMERIC_COLUMNS, values)})
    return row


def records_to_csv(records: Sequence[EvalRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\r\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record_row(record))
    return buffer.getvalue()


def write_records_csv(records: Sequence[EvalRecord], path: Union[str, Path]) -> Path:
    return atomic_write_text(path, records_to_csv(records))


def read_records_csv(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Rows of an evaluation CSV with the numeric columns parsed back to floats."""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        for name in NUMERIC_COLUMNS:
            row[name] = float(row[name])
    return rows


def write_summary_json(summary: Dict[str, float], path: Union[str, Path]) -> Path:
    ordered = {key: summary[key] for key in SUMMARY_KEYS}
    return atomic_write_text(path, json.dumps(ordered, indent=2) + "\n")


def write_evaluation_excel(records: Sequence[EvalRecord], summary: Dict[str, float],
                           path: Union[str, Path]) -> Path:
    """
    Workbook with a "Summary" sheet and a "Records" sheet mirroring the CSV columns.

    Args:
        records: evaluation records in output order
        summary: summary metrics (see SUMMARY_KEYS)
        path: destination .xlsx file

    Returns:
        Path of the written workbook
    """
    try:
        wb = Workbook()
        ws = wb.active
        ws.title = "Summary"

        header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
        header_font = Font(bold=True, color="FFFFFF", size=12)
        label_font = Font(bold=True, size=11)
        border = Border(
            left=Side(style='thin'),
            right=Side(style='thin'),
            top=Side(style='thin'),
            bottom=Side(style='thin')
        )

        ws.merge_cells('A1:B1')
        title_cell = ws['A1']
        title_cell.value = "Pose and Shape Evaluation"
        title_cell.font = Font(bold=True, size=14)
        title_cell.fill = header_fill
        title_cell.alignment = Alignment(horizontal='center', vertical='center')

        row = 3
        for key in SUMMARY_KEYS:
            label_cell = ws.cell(row=row, column=1, value=key)
            label_cell.font = label_font
            label_cell.border = border
            value_cell = ws.cell(row=row, column=2, value=summary[key])
            value_cell.border = border
            row += 1
        ws.column_dimensions['A'].width = 18
        ws.column_dimensions['B'].width = 24

        sheet = wb.create_sheet("Records")
        for column, name in enumerate(CSV_COLUMNS, start=1):
            cell = sheet.cell(row=1, column=column, value=name)
            cell.font = header_font
            cell.fill = header_fill
            cell.border = border
            cell.alignment = Alignment(horizontal='center', vertical='center')
            sheet.column_dimensions[get_column_letter(column)].width = max(12, len(name) + 2)
        for row_index, record in enumerate(records, start=2):
            values = record_row(record)
            for column, name in enumerate(CSV_COLUMNS, start=1):
                value = values[name] if name in TEXT_COLUMNS else float(values[name])
                sheet.cell(row=row_index, column=column, value=value).border = border
        sheet.freeze_panes = "A2"

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        wb.save(path)
        print(f"SUCCESS: [REPORT] Excel report written to {path}")
        return path

    except Exception as e:
        print(f"ERROR: [REPORT] Failed to generate Excel report: {e}")
        raise
