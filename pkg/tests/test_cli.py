import json

import numpy as np
import pytest

from src.cli.commands import derive_seed, CALIBRATION_STREAM, EVALUATION_STREAM
from src.config.settings import settings
from src.config.tolerances import E2E_COSINE, E2E_ARGMAX_AGREEMENT
from src.main import main, parse_args
from src.models.tensor_models import FpTensor, QTensor
from src.services.error_handler import EXIT_OK, EXIT_TOLERANCE_FAILURE, EXIT_USAGE_ERROR, UsageError
from src.services.model_storage import FP_MANIFEST_NAME, MANIFEST_NAME
from src.services.report_writer import read_report
from src.services.rng import Rng, gen_gaussian
from src.services.tensor_io import read_tensor, write_tensor

TINY_FLAGS = ["--image-size", "8", "--patch-size", "4", "--d-model", "16", "--heads", "2",
              "--mlp-ratio", "2", "--depth", "1", "--num-classes", "10"]


@pytest.fixture
def tiny_dir(tmp_path):
    model_dir = tmp_path / "model"
    assert main(["gen-model", "--out-dir", str(model_dir), "--seed", "0", *TINY_FLAGS]) == EXIT_OK
    return model_dir


@pytest.fixture
def quantized_dir(tiny_dir):
    assert main(["quantize", "--model-dir", str(tiny_dir), "--num-inputs", "4"]) == EXIT_OK
    return tiny_dir


def _images(path, count):
    dims = (count, 3, 8, 8) if count > 1 else (3, 8, 8)
    write_tensor(path, gen_gaussian(Rng(11), dims))
    return path


class TestParsing:

    def test_help(self):
        assert main(["--help"]) == EXIT_OK

    def test_missing_required_option(self):
        assert main(["infer", "--model-dir", "x"]) == EXIT_USAGE_ERROR

    def test_config_file_supplies_defaults(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"trials": 50, "int-div-m": 50}), encoding='utf-8')
        args = parse_args(["kernel-test", "--kernel", "isqrt", "--config", str(config)])
        assert (args.trials, args.int_div_m) == (50, 50)
        args = parse_args(["kernel-test", "--kernel", "isqrt", "--config", str(config), "--trials", "7"])
        assert args.trials == 7

    def test_config_unknown_key(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"colour": "blue"}), encoding='utf-8')
        with pytest.raises(UsageError):
            parse_args(["kernel-test", "--kernel", "isqrt", "--config", str(config)])
        assert main(["kernel-test", "--kernel", "isqrt", "--config", str(config)]) == EXIT_USAGE_ERROR

    def test_config_missing(self, tmp_path):
        assert main(["kernel-test", "--kernel", "isqrt", "--config", str(tmp_path / "none.json")]) \
            == EXIT_USAGE_ERROR

    def test_derived_seeds_are_distinct(self):
        assert derive_seed(0, CALIBRATION_STREAM) != derive_seed(0, EVALUATION_STREAM)
        assert derive_seed(5, EVALUATION_STREAM) == derive_seed(5, EVALUATION_STREAM)


class TestGenModel:

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-model", "--out-dir", str(tmp_path / name), "--seed", "4", *TINY_FLAGS]) == EXIT_OK
        assert (tmp_path / "a" / FP_MANIFEST_NAME).read_bytes() == (tmp_path / "b" / FP_MANIFEST_NAME).read_bytes()

    def test_bit_widths_default_from_settings(self, monkeypatch):
        monkeypatch.setattr(settings, 'softmax_out_bits', 6)
        assert parse_args(["gen-model", "--out-dir", "m"]).softmax_bits == 6
        assert parse_args(["gen-model", "--out-dir", "m", "--softmax-bits", "7"]).softmax_bits == 7

    def test_invalid_topology(self, tmp_path):
        assert main(["gen-model", "--out-dir", str(tmp_path / "m"), "--d-model", "30", "--heads", "4"]) \
            == EXIT_USAGE_ERROR


class TestPipeline:

    def test_infer_requires_quantized_model(self, tiny_dir, tmp_path):
        assert main(["infer", "--model-dir", str(tiny_dir), "--input", str(_images(tmp_path / "x.itns", 1)),
                     "--out", str(tmp_path / "y.itns")]) == EXIT_USAGE_ERROR

    def test_calibrate_then_quantize(self, tiny_dir):
        assert main(["calibrate", "--model-dir", str(tiny_dir), "--num-inputs", "3"]) == EXIT_OK
        assert main(["quantize", "--model-dir", str(tiny_dir),
                     "--calibration", str(tiny_dir / "calibration.json")]) == EXIT_OK
        assert (tiny_dir / MANIFEST_NAME).exists()

    def test_infer_batch(self, quantized_dir, tmp_path):
        out = tmp_path / "logits.itns"
        assert main(["infer", "--model-dir", str(quantized_dir),
                     "--input", str(_images(tmp_path / "batch.itns", 3)), "--out", str(out)]) == EXIT_OK
        logits = read_tensor(out)
        assert isinstance(logits, QTensor)
        assert logits.dims == (3, 10)
        assert logits.bits == 32

    def test_infer_fp_single(self, quantized_dir, tmp_path):
        out = tmp_path / "fp.itns"
        assert main(["infer-fp", "--model-dir", str(quantized_dir),
                     "--input", str(_images(tmp_path / "one.itns", 1)), "--out", str(out)]) == EXIT_OK
        logits = read_tensor(out)
        assert isinstance(logits, FpTensor)
        assert logits.dims == (10,)

    def test_infer_rejects_wrong_shape(self, quantized_dir, tmp_path):
        write_tensor(tmp_path / "odd.itns", FpTensor(data=np.zeros((3, 4, 4))))
        assert main(["infer", "--model-dir", str(quantized_dir), "--input", str(tmp_path / "odd.itns"),
                     "--out", str(tmp_path / "y.itns")]) == EXIT_USAGE_ERROR

    def test_compare_writes_report(self, quantized_dir, tmp_path):
        report_path = tmp_path / "compare.json"
        code = main(["compare", "--model-dir", str(quantized_dir), "--num-inputs", "4",
                     "--report", str(report_path), "--fallback-nonlinear", "--batch-workers", "2"])
        report = read_report(report_path)
        assert code == (EXIT_OK if report.passed else EXIT_TOLERANCE_FAILURE)
        assert [record.site for record in report.records] == ["logits", "logits.fp_fallback"]
        assert report.baseline_slots['fp_fallback_nonlinear'] is not None
        assert report.run_config.fallback_nonlinear
        assert report.run_config.model['d_model'] == 16
        assert report.run_config.model['depth'] == 1
        assert report.run_config.score_bits == 8
        assert (tmp_path / "compare.txt").exists()

    def test_report_records_model_bit_widths(self, tmp_path):
        model_dir = tmp_path / "narrow"
        assert main(["gen-model", "--out-dir", str(model_dir), "--softmax-bits", "6", *TINY_FLAGS]) == EXIT_OK
        assert main(["quantize", "--model-dir", str(model_dir), "--num-inputs", "4", "-N", "14"]) == EXIT_OK
        main(["compare", "--model-dir", str(model_dir), "--num-inputs", "2",
              "--report", str(tmp_path / "narrow.json")])
        run_config = read_report(tmp_path / "narrow.json").run_config
        assert run_config.softmax_bits == 6
        assert run_config.shift_exp_n == 14
        assert run_config.model['num_classes'] == 10

    def test_compare_is_reproducible(self, quantized_dir, tmp_path):
        for name in ("a.json", "b.json"):
            main(["compare", "--model-dir", str(quantized_dir), "--num-inputs", "2",
                  "--report", str(tmp_path / name)])
        first = json.loads((tmp_path / "a.json").read_text(encoding='utf-8'))
        second = json.loads((tmp_path / "b.json").read_text(encoding='utf-8'))
        first['run_config']['paths'].pop('report')
        second['run_config']['paths'].pop('report')
        assert first == second


class TestKernelTest:

    def test_runs_and_writes_report(self, tmp_path):
        report_path = tmp_path / "isqrt.json"
        assert main(["kernel-test", "--kernel", "isqrt", "--trials", "500",
                     "--report", str(report_path)]) == EXIT_OK
        report = read_report(report_path)
        assert report.run_config.trials == 500
        assert report.run_config.kernel.value == "isqrt"

    def test_unknown_kernel(self):
        assert main(["kernel-test", "--kernel", "softmax", "--trials", "1"]) == EXIT_USAGE_ERROR

    def test_input_spec_overrides(self, tmp_path):
        report_path = tmp_path / "ln.json"
        assert main(["kernel-test", "--kernel", "i_layernorm", "--trials", "64", "--width", "32",
                     "--report", str(report_path)]) == EXIT_OK
        spec = read_report(report_path).run_config.input_spec
        assert spec.width == 32
        assert spec.distribution.value == "gaussian"


@pytest.mark.slow
def test_desk_scale_end_to_end(tmp_path):
    model_dir = tmp_path / "desk"
    assert main(["gen-model", "--out-dir", str(model_dir), "--seed", "0"]) == EXIT_OK
    assert main(["quantize", "--model-dir", str(model_dir), "--num-inputs", "64"]) == EXIT_OK
    assert main(["compare", "--model-dir", str(model_dir), "--num-inputs", "1000",
                 "--report", str(tmp_path / "e2e.json")]) == EXIT_OK
    record = read_report(tmp_path / "e2e.json").records[0]
    assert record.site == "logits"
    assert record.cosine_similarity >= E2E_COSINE
    assert record.argmax_agreement >= E2E_ARGMAX_AGREEMENT
