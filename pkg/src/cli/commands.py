"""
命令实现

每个命令只读写显式给出的路径，给定种子时输出逐字节确定。
"""

from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from ..config import tolerances
from ..models.tensor_models import FpTensor, QTensor
from ..models.quant_models import KernelConfig
from ..models.report_models import ErrorReport, InputSpec, RunConfig, SiteRecord
from ..models.vit_models import CalibrationMethod, ModelConfig, QViTModel
from ..services.error_handler import InvalidArgumentError, UsageError
from ..services.error_metrics import compare_arrays
from ..services.fp_oracle import fp_forward
from ..services.kernel_sweep import KernelSweepFactory
from ..services.model_builder import gen_fp_weights, gen_inputs, collect_calibration, build_qmodel
from ..services.model_storage import ModelStorage
from ..services.quantizer import dequantize
from ..services.report_writer import write_report, render_scale_tables
from ..services.rng import Rng, rng_next_u64
from ..services.saturation_tracker import saturation_tracker
from ..services.tensor_io import read_tensor, write_tensor
from ..services.vit_engine import IntViTEngine
from ..utils.logger import get_logger

logger = get_logger("commands")

PathLike = Union[str, Path]

# 由主种子派生的输入流编号
CALIBRATION_STREAM = 1
EVALUATION_STREAM = 2


def derive_seed(seed: int, stream: int) -> int:
    """主种子的第 stream 个派生种子，校准输入与评估输入互不重叠"""
    rng = Rng(seed)
    value = seed
    for _ in range(stream):
        value = rng_next_u64(rng)
    return value


def load_images(path: PathLike, config: ModelConfig) -> Tuple[List[FpTensor], bool]:
    """
    读取 ITNS 输入图像: (C, H, W) 单张或 (N, C, H, W) 批量

    Returns:
        (图像列表, 是否为单张输入)
    """
    tensor = read_tensor(path)
    if not isinstance(tensor, FpTensor):
        raise InvalidArgumentError(f"输入图像必须是浮点张量: {path}")
    image_dims = (config.channels, config.image_size, config.image_size)
    if tensor.dims == image_dims:
        return [tensor], True
    if len(tensor.dims) == 4 and tensor.dims[1:] == image_dims:
        return [FpTensor(data=image) for image in tensor.data], False
    raise InvalidArgumentError(f"输入形状 {tensor.dims} 与模型输入 {image_dims} 不一致")


def _resolve_images(config: ModelConfig, inputs_path: Optional[PathLike], count: int,
                    seed: int, stream: int) -> List[FpTensor]:
    if inputs_path:
        return load_images(inputs_path, config)[0]
    if count < 1:
        raise UsageError(f"输入个数必须 >= 1: {count}")
    return gen_inputs(config, count, derive_seed(seed, stream))


def _require_fp_weights(storage: ModelStorage):
    if not storage.has_fp_weights():
        raise UsageError(f"模型目录没有浮点权重(先运行 gen-model): {storage.model_dir}")


def _require_qmodel(storage: ModelStorage):
    if not storage.has_qmodel():
        raise UsageError(f"模型目录没有量化模型(先运行 quantize): {storage.model_dir}")


def cmd_gen_model(config: ModelConfig, seed: int, out_dir: PathLike,
                  init_std: Optional[float] = None) -> Path:
    """生成高斯初始化的浮点权重并写入 out_dir"""
    weights = gen_fp_weights(config, seed, init_std)
    path = ModelStorage(out_dir).save_fp_weights(weights)
    logger.info(f"浮点模型已生成: depth={config.depth}, d_model={config.d_model}, seed={seed}")
    return path


def cmd_calibrate(model_dir: PathLike, seed: int, num_inputs: int = 64,
                  inputs_path: Optional[PathLike] = None,
                  method: CalibrationMethod = CalibrationMethod.MINMAX,
                  percentile: float = 99.99,
                  out_path: Optional[PathLike] = None) -> Path:
    """在浮点前向上收集激活范围，写出 calibration.json"""
    storage = ModelStorage(model_dir)
    _require_fp_weights(storage)
    weights = storage.load_fp_weights()
    images = _resolve_images(weights.config, inputs_path, num_inputs, seed, CALIBRATION_STREAM)
    stats = collect_calibration(weights, images, method, percentile,
                                seed=None if inputs_path else seed)
    return storage.save_calibration(stats, Path(out_path) if out_path else None)


def cmd_quantize(model_dir: PathLike, kernel_config: KernelConfig, seed: int,
                 calibration_path: Optional[PathLike] = None, num_inputs: int = 64,
                 method: CalibrationMethod = CalibrationMethod.MINMAX,
                 percentile: float = 99.99) -> QViTModel:
    """
    构建并保存量化模型

    给定校准文件时直接使用；否则按种子生成校准输入并现场校准。
    """
    storage = ModelStorage(model_dir)
    _require_fp_weights(storage)
    weights = storage.load_fp_weights()
    if calibration_path:
        calib = storage.load_calibration(Path(calibration_path))
    else:
        images = _resolve_images(weights.config, None, num_inputs, seed, CALIBRATION_STREAM)
        calib = collect_calibration(weights, images, method, percentile, seed=seed)

    model = build_qmodel(weights, calib, kernel_config)
    storage.save_qmodel(model)
    print(render_scale_tables(model), end="")
    return model


def _stack_logits(logits: List[QTensor], single: bool) -> QTensor:
    if single:
        return logits[0]
    return logits[0].with_data(np.stack([item.data for item in logits]))


def cmd_infer(model_dir: PathLike, input_path: PathLike, out_path: PathLike,
              audit: bool = True, workers: Optional[int] = None) -> Path:
    """整数推理，写出 32 位整数 logits((classes,) 或 (N, classes))"""
    storage = ModelStorage(model_dir)
    _require_qmodel(storage)
    model = storage.load_qmodel()
    engine = IntViTEngine(model)
    images, single = load_images(input_path, model.config)
    logits = engine.forward_batch([engine.quantize_input(image) for image in images],
                                  workers=workers, audit=audit)
    saturation_tracker.log_summary()

    write_tensor(out_path, _stack_logits(logits, single))
    logger.info(f"整数推理完成: {len(images)} 张图像 -> {out_path}")
    return Path(out_path)


def cmd_infer_fp(model_dir: PathLike, input_path: PathLike, out_path: PathLike) -> Path:
    """浮点参考推理，写出 64 位浮点 logits"""
    storage = ModelStorage(model_dir)
    _require_fp_weights(storage)
    weights = storage.load_fp_weights()
    images, single = load_images(input_path, weights.config)
    logits = [fp_forward(weights, image).data for image in images]

    write_tensor(out_path, FpTensor(data=logits[0] if single else np.stack(logits)))
    logger.info(f"浮点推理完成: {len(images)} 张图像 -> {out_path}")
    return Path(out_path)


def _logits_metrics(engine: IntViTEngine, images: List[QTensor], reference: np.ndarray,
                    workers: Optional[int], audit: bool):
    logits = engine.forward_batch(images, workers=workers, audit=audit)
    approx = np.stack([dequantize(item).data for item in logits])
    return compare_arrays(approx, reference)


def cmd_compare(model_dir: PathLike, report_path: PathLike, seed: int, num_inputs: int = 100,
                inputs_path: Optional[PathLike] = None, fallback_nonlinear: bool = False,
                workers: Optional[int] = None,
                run_config: Optional[RunConfig] = None) -> ErrorReport:
    """
    整数推理与浮点参考的 logits 比较

    评估输入与校准输入来自不同的派生种子。fallback_nonlinear 时追加
    非线性算子浮点回退的对照记录(不参与通过判定)。
    """
    storage = ModelStorage(model_dir)
    _require_qmodel(storage)
    _require_fp_weights(storage)
    model = storage.load_qmodel()
    weights = storage.load_fp_weights()
    if weights.config != model.config:
        raise UsageError("浮点权重与量化模型的结构配置不一致")
    if run_config is not None:
        run_config = run_config.with_model(model.config, model.kernel_config)

    images = _resolve_images(model.config, inputs_path, num_inputs, seed, EVALUATION_STREAM)
    reference = np.stack([fp_forward(weights, image).data for image in images])

    saturation_tracker.reset()
    engine = IntViTEngine(model)
    quantized = [engine.quantize_input(image) for image in images]
    metrics = _logits_metrics(engine, quantized, reference, workers, audit=True)
    saturation = saturation_tracker.snapshot()
    saturation_tracker.log_summary()

    passed = (metrics.cosine_similarity >= tolerances.E2E_COSINE
              and metrics.argmax_agreement >= tolerances.E2E_ARGMAX_AGREEMENT)
    records = [SiteRecord.from_metrics(
        "logits", metrics, reference="fp_forward", tolerance=tolerances.E2E_COSINE, passed=passed,
        clamped=sum(counts['clamped'] for counts in saturation.values()),
        total=sum(counts['total'] for counts in saturation.values()),
        extra={'argmax_threshold': tolerances.E2E_ARGMAX_AGREEMENT})]

    report = ErrorReport(title="compare", seed=seed, run_config=run_config,
                         tolerances=dict(tolerances.E2E_TOLERANCES), saturation=saturation)
    if fallback_nonlinear:
        fallback = IntViTEngine(model, nonlinear_fallback=True)
        fallback_metrics = _logits_metrics(fallback, quantized, reference, workers, audit=False)
        records.append(SiteRecord.from_metrics("logits.fp_fallback", fallback_metrics,
                                               reference="fp_forward"))
        report.baseline_slots['fp_fallback_nonlinear'] = fallback_metrics.cosine_similarity

    report = report.model_copy(update={'records': records}).finalize()
    logger.info(f"比较完成: cosine={metrics.cosine_similarity:.6f}, "
                f"argmax={metrics.argmax_agreement:.4f}, passed={report.passed}")
    write_report(report, report_path)
    return report


def cmd_kernel_test(kernel: str, spec: Optional[InputSpec], trials: int, seed: int,
                    kernel_config: KernelConfig, report_path: Optional[PathLike] = None,
                    run_config: Optional[RunConfig] = None) -> ErrorReport:
    """算子扫描验证；给定 report_path 时写出报告"""
    report = KernelSweepFactory.execute_sweep(kernel, spec, trials, seed,
                                              kernel_config=kernel_config, run_config=run_config)
    if report_path:
        write_report(report, report_path)
    return report
