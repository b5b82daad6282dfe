"""
误差报告与尺度表的输出

报告 JSON 字段顺序固定、不含时间戳，同一种子两次运行逐字节一致。
"""

from pathlib import Path
from typing import List, Sequence, Union

from ..models.report_models import ErrorReport
from ..models.vit_models import QViTModel
from .error_handler import InvalidArgumentError
from .model_builder import scale_summary, dyadic_entries
from .model_storage import dump_json
from ..utils.logger import get_logger

logger = get_logger("report_writer")

RECORD_COLUMNS = ("site", "reference", "count", "max_abs", "mean_abs", "cosine",
                  "argmax", "tolerance", "clamped", "passed")


def _format_float(value) -> str:
    if value is None:
        return "-"
    return f"{value:.6g}"


def render_rows(header: Sequence[str], rows: List[Sequence[str]]) -> str:
    """对齐的纯文本表格(首列左对齐，其余右对齐)"""
    widths = [len(name) for name in header]
    for row in rows:
        widths = [max(width, len(cell)) for width, cell in zip(widths, row)]

    def line(cells: Sequence[str]) -> str:
        parts = [cells[0].ljust(widths[0])]
        parts.extend(cell.rjust(width) for cell, width in zip(cells[1:], widths[1:]))
        return "  ".join(parts).rstrip()

    separator = "  ".join("-" * width for width in widths)
    return "\n".join([line(header), separator, *(line(row) for row in rows)]) + "\n"


def render_table(report: ErrorReport) -> str:
    """
    渲染误差报告

    Args:
        report: 误差报告

    Returns:
        标题行 + 逐站点表格 + 饱和统计 + 总体结果
    """
    rows = []
    for record in report.records:
        clamped = report.saturation.get(record.site, {}).get('clamped', record.clamped)
        rows.append((
            record.site,
            record.reference or "-",
            str(record.count),
            _format_float(record.max_abs_error),
            _format_float(record.mean_abs_error),
            _format_float(record.cosine_similarity),
            _format_float(record.argmax_agreement),
            _format_float(record.tolerance),
            str(clamped),
            "PASS" if record.passed else "FAIL",
        ))

    text = f"# {report.title} (seed={report.seed})\n"
    text += render_rows(RECORD_COLUMNS, rows) if rows else "(no records)\n"

    saturated = [(site, counts) for site, counts in report.saturation.items() if counts['clamped']]
    if saturated:
        text += "\n" + render_rows(
            ("saturated_site", "clamped", "total"),
            [(site, str(counts['clamped']), str(counts['total'])) for site, counts in saturated])

    text += f"\nresult: {'PASS' if report.passed else 'FAIL'}\n"
    return text


def render_scale_tables(model: QViTModel) -> str:
    """量化模型的尺度表(site, m, S, bits)与二进分数表(name, b, c, ratio)"""
    scale_rows = [(site, _format_float(m), _format_float(S), str(bits))
                  for site, m, S, bits in scale_summary(model)]
    dyadic_rows = [(name, str(dyadic.b), str(dyadic.c), _format_float(ratio))
                   for name, dyadic, ratio in dyadic_entries(model)]
    return (render_rows(("site", "m", "S", "bits"), scale_rows) + "\n"
            + render_rows(("dyadic", "b", "c", "ratio"), dyadic_rows))


def table_path(path: Path) -> Path:
    return path.with_suffix(".txt")


def write_report(report: ErrorReport, path: Union[str, Path]) -> Path:
    """
    写出报告 JSON，同时在旁边写出同名 .txt 表格

    Returns:
        JSON 文件路径
    """
    path = Path(path)
    if path.suffix == ".txt":
        raise InvalidArgumentError(f"报告路径不能以 .txt 结尾: {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(report.model_dump(mode='json')), encoding='utf-8')
    table_path(path).write_text(render_table(report), encoding='utf-8')
    logger.info(f"报告已写出: {path} ({len(report.records)} 条记录, passed={report.passed})")
    return path


def read_report(path: Union[str, Path]) -> ErrorReport:
    """读取报告 JSON"""
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"报告文件不存在: {path}")
    try:
        return ErrorReport.model_validate_json(path.read_text(encoding='utf-8'))
    except ValueError as e:
        raise InvalidArgumentError(f"报告文件格式错误: {path}: {e}") from e
