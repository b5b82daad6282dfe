import pytest

from src.models.report_models import ErrorReport, SiteRecord, BASELINE_SLOT_NAMES
from src.services.error_handler import InvalidArgumentError
from src.services.report_writer import render_table, render_scale_tables, write_report, read_report


def _report(passed: bool = True) -> ErrorReport:
    records = [SiteRecord(site="shiftmax", reference="fp_softmax", count=10, max_abs_error=0.01,
                          tolerance=0.04, passed=passed)]
    return ErrorReport(title="kernel-test shiftmax", seed=3, records=records,
                       saturation={"shiftmax": {'clamped': 2, 'total': 10}}).finalize()


class TestRender:

    def test_table_contents(self):
        text = render_table(_report())
        assert text.startswith("# kernel-test shiftmax (seed=3)\n")
        assert "fp_softmax" in text
        assert "saturated_site" in text
        assert text.endswith("result: PASS\n")

    def test_failure_is_reported(self):
        report = _report(passed=False)
        assert not report.passed
        assert render_table(report).endswith("result: FAIL\n")

    def test_empty_report(self):
        assert "(no records)" in render_table(ErrorReport(title="empty"))

    def test_scale_tables(self, tiny_model):
        text = render_scale_tables(tiny_model)
        assert "patch_embed.requant" in text
        assert "norm.out" in text


class TestWriteRead:

    def test_round_trip(self, tmp_path):
        path = write_report(_report(), tmp_path / "report.json")
        assert (tmp_path / "report.txt").read_text(encoding='utf-8') == render_table(_report())
        loaded = read_report(path)
        assert loaded == _report()
        assert set(loaded.baseline_slots) == set(BASELINE_SLOT_NAMES)

    def test_bytes_are_stable(self, tmp_path):
        write_report(_report(), tmp_path / "a.json")
        write_report(_report(), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_txt_path_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_report(_report(), tmp_path / "report.txt")

    def test_missing_report(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            read_report(tmp_path / "missing.json")

    def test_malformed_report(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json", encoding='utf-8')
        with pytest.raises(InvalidArgumentError):
            read_report(tmp_path / "bad.json")
