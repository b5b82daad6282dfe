"""
算子扫描验证: 按输入分布采样，运行整数算子并与浮点参考 / 标量参考 / 性质检查比较
"""

import math
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config import tolerances
from ..models.tensor_models import QTensor
from ..models.quant_models import KernelConfig, QuantParams, RequantRounding
from ..models.report_models import (
    KernelId, InputSpec, InputDistribution, SiteRecord, ErrorReport, RunConfig,
)
from ..models.vit_models import LayerNormParams
from .error_handler import UnknownKernelError, InvalidArgumentError
from .error_metrics import MetricsAccumulator
from .fp_oracle import softmax_array, gelu_sigmoid_array, gelu_erf_array, layernorm_array
from .int_math import exp_unit, shift_exp_int, int_div, int_isqrt
from .quantizer import requantize, to_dyadic, dyadic_for
from .rng import Rng, gen_gaussian
from .saturation_tracker import saturation_tracker
from .scalar_reference import shiftmax_scalar, shift_gelu_scalar, int_div_scalar, isqrt_scalar
from .shift_kernels import shiftmax, shift_gelu, i_layernorm
from ..utils.logger import get_logger

logger = get_logger("kernel_sweep")

CHUNK_ROWS = 4096
SCALAR_ROWS = 8
REQUANT_GROUP = 1024
REQUANT_NARROW_BITS = 24
INT32_MAX = (1 << 31) - 1
GRID_LIMIT = 1 << 24
_isqrt = np.vectorize(math.isqrt, otypes=[np.int64])


def _input_bits(spec: InputSpec) -> int:
    return 8 if spec.low >= -128 and spec.high <= 127 else 16


def sample_ints(rng: Rng, spec: InputSpec, count: int) -> np.ndarray:
    """按输入分布采样 count 个整数"""
    if spec.distribution == InputDistribution.GRID:
        if spec.high - spec.low >= GRID_LIMIT:
            raise InvalidArgumentError(f"网格过大: [{spec.low}, {spec.high}]")
        return np.arange(spec.low, spec.high + 1, dtype=np.int64)
    if spec.distribution == InputDistribution.GAUSSIAN:
        values = np.rint(gen_gaussian(rng, (count,), 0.0, spec.std).data).astype(np.int64)
        return np.clip(values, spec.low, spec.high)
    return rng.integers(spec.low, spec.high, count)


def _chunks(total: int, size: int):
    done = 0
    while done < total:
        step = min(size, total - done)
        yield step
        done += step


class KernelSweepHandler(ABC):
    """单个算子的扫描处理器"""

    kernel: KernelId

    @abstractmethod
    def default_spec(self) -> InputSpec:
        """验收使用的默认输入分布"""

    @abstractmethod
    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        """
        执行扫描

        Args:
            spec: 输入分布
            trials: 采样次数(行数 / 样本数)
            rng: 随机数生成器
            cfg: 算子配置

        Returns:
            误差记录
        """

    def tolerances(self) -> Dict[str, float]:
        prefix = f"{self.kernel.value}."
        return {key: value for key, value in tolerances.KERNEL_TOLERANCES.items()
                if key.startswith(prefix)}


class ShiftmaxSweep(KernelSweepHandler):
    """Shiftmax 与 Softmax 比较，并检查归一化、保序、平移不变性"""

    kernel = KernelId.SHIFTMAX

    def default_spec(self) -> InputSpec:
        return InputSpec(width=197, scales=[1 / 8, 1 / 16, 1 / 64, 1 / 128])

    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        accumulator = MetricsAccumulator()
        counts = {'normalization_violations': 0, 'order_violations': 0,
                  'shift_violations': 0, 'scalar_mismatches': 0}
        bits, width, k_out = _input_bits(spec), spec.width, spec.k_out
        out_scale = 1.0 / float(1 << (k_out - 1))
        scale_units = {scale: exp_unit(scale) for scale in spec.scales}

        for rows in _chunks(trials, CHUNK_ROWS):
            which = rng.integers(0, len(spec.scales) - 1, rows)
            ints = sample_ints(rng, spec.model_copy(update={'distribution': InputDistribution.UNIFORM})
                               if spec.distribution == InputDistribution.GRID else spec,
                               rows * width).reshape(rows, width)
            # 每块前 1/8 行为近似平局行: 元素只取 high 或 high-1
            ties = rows // 8
            ints[:ties] = spec.high - rng.integers(0, 1, ties * width).reshape(ties, width)
            for index, scale in enumerate(spec.scales):
                group = ints[which == index]
                if group.shape[0] == 0:
                    continue
                i0 = scale_units[scale]
                out = shiftmax(QTensor(data=group, scale=scale, bits=bits), k_out, cfg.int_math,
                               i0=i0, site="sweep.shiftmax")
                approx = out.data * out_scale
                accumulator.add_arrays(approx, softmax_array(scale * group))

                sums = approx.sum(axis=-1)
                lower = 1.0 - (width + 2) * out_scale
                counts['normalization_violations'] += int(np.count_nonzero((sums > 1.0) | (sums < lower)))

                order = np.argsort(group, axis=-1, kind='stable')
                ordered = np.take_along_axis(out.data, order, axis=-1)
                counts['order_violations'] += int(np.count_nonzero((np.diff(ordered, axis=-1) < 0).any(axis=-1)))

                shifted = group - (group.min(axis=-1, keepdims=True) - spec.low)
                moved = shiftmax(QTensor(data=shifted, scale=scale, bits=bits), k_out, cfg.int_math,
                                 i0=i0, site="sweep.shiftmax")
                counts['shift_violations'] += int(np.count_nonzero((moved.data != out.data).any(axis=-1)))

                for row_index in range(min(SCALAR_ROWS, group.shape[0])):
                    expected = shiftmax_scalar(group[row_index].tolist(), i0, k_out,
                                               cfg.int_math.N, cfg.int_math.M)
                    if expected != out.data[row_index].tolist():
                        counts['scalar_mismatches'] += 1

        metrics = accumulator.result()
        passed = (metrics.max_abs_error <= tolerances.SHIFTMAX_MAX_ABS
                  and metrics.mean_abs_error <= tolerances.SHIFTMAX_MEAN_ABS
                  and not any(counts.values()))
        return [SiteRecord.from_metrics("shiftmax", metrics, reference="fp_softmax",
                                        tolerance=tolerances.SHIFTMAX_MAX_ABS, passed=passed,
                                        extra={key: float(value) for key, value in counts.items()})]


class ShiftGeluSweep(KernelSweepHandler):
    """
    ShiftGELU 与 x·σ(1.702x) 比较；x·σ(1.702x) 与精确 GELU 的差单独记录

    GRID 分布逐元素评估(每个输入单独成张量)；其它分布按宽度为 width 的张量评估。
    """

    kernel = KernelId.SHIFT_GELU

    def default_spec(self) -> InputSpec:
        return InputSpec(distribution=InputDistribution.GRID, scales=[1 / 8, 1 / 16, 1 / 64])

    def _evaluate(self, group: np.ndarray, scale: float, i0: int, k_out: int,
                  cfg: KernelConfig, per_element: bool) -> np.ndarray:
        if per_element:
            return np.array([int(shift_gelu(QTensor(data=[value], scale=scale, bits=8), k_out,
                                            cfg.int_math, i0=i0, site="sweep.shift_gelu").data[0])
                             for value in group.ravel()], dtype=np.int64).reshape(group.shape)
        return shift_gelu(QTensor(data=group, scale=scale, bits=8), k_out, cfg.int_math,
                          i0=i0, site="sweep.shift_gelu").data

    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        if spec.low < -128 or spec.high > 127:
            raise InvalidArgumentError("ShiftGELU 扫描输入必须在 8 位范围内")
        k_out = spec.k_out
        kernel_acc, erf_acc, gap_acc = MetricsAccumulator(), MetricsAccumulator(), MetricsAccumulator()
        counts = {'sign_violations': 0, 'scalar_mismatches': 0}
        per_element = spec.distribution == InputDistribution.GRID
        sigmoid_scale = 1.0 / float(1 << (k_out - 1))

        batches: List[Tuple[float, np.ndarray]] = []
        if per_element:
            grid = sample_ints(rng, spec, 0)
            batches = [(scale, grid.reshape(-1, 1)) for scale in spec.scales]
        else:
            for rows in _chunks(trials, CHUNK_ROWS):
                which = rng.integers(0, len(spec.scales) - 1, rows)
                ints = sample_ints(rng, spec, rows * spec.width).reshape(rows, spec.width)
                batches.extend((scale, ints[which == index]) for index, scale in enumerate(spec.scales))

        for scale, group in batches:
            if group.size == 0:
                continue
            i0 = exp_unit(scale)
            if per_element:
                out = self._evaluate(group, scale, i0, k_out, cfg, per_element=True)
            else:
                out = np.stack([self._evaluate(row, scale, i0, k_out, cfg, per_element=False)
                                for row in group])
            x = scale * group
            approx = out * (scale * sigmoid_scale)
            target = gelu_sigmoid_array(x)
            exact = gelu_erf_array(x)
            kernel_acc.add_arrays(approx.ravel(), target.ravel())
            erf_acc.add_arrays(approx.ravel(), exact.ravel())
            gap_acc.add_arrays(target.ravel(), exact.ravel())

            nonzero = out != 0
            counts['sign_violations'] += int(np.count_nonzero((group == 0) & nonzero))
            counts['sign_violations'] += int(np.count_nonzero(nonzero & (np.sign(out) != np.sign(group))))

            scalar_rows = group if per_element else group[:SCALAR_ROWS]
            for row, produced in zip(scalar_rows, out):
                expected = shift_gelu_scalar(row.tolist(), i0, k_out, cfg.int_math.N, cfg.int_math.M)
                if expected != produced.tolist():
                    counts['scalar_mismatches'] += 1

        metrics = kernel_acc.result()
        passed = metrics.max_abs_error <= tolerances.SHIFT_GELU_MAX_ABS and not any(counts.values())
        return [
            SiteRecord.from_metrics("shift_gelu", metrics, reference="fp_gelu_sigmoid",
                                    tolerance=tolerances.SHIFT_GELU_MAX_ABS, passed=passed,
                                    extra={key: float(value) for key, value in counts.items()}),
            SiteRecord.from_metrics("shift_gelu.vs_erf", erf_acc.result(), reference="fp_gelu_erf"),
            SiteRecord.from_metrics("gelu_sigmoid.vs_erf", gap_acc.result(), reference="fp_gelu_erf"),
        ]


class ShiftExpSweep(KernelSweepHandler):
    """ShiftExp 与 e^(S·I) 比较并检查单调性"""

    kernel = KernelId.SHIFT_EXP

    def default_spec(self) -> InputSpec:
        return InputSpec(distribution=InputDistribution.GRID, low=-(1 << 15), high=0)

    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        bounded = spec.model_copy(update={'high': min(spec.high, 0), 'low': min(spec.low, 0)})
        accumulator = MetricsAccumulator()
        counts = {'monotonicity_violations': 0, 'range_violations': 0}
        N = cfg.int_math.N
        for scale in spec.scales:
            ints = np.sort(sample_ints(rng, bounded, trials))
            if ints.size == 0:
                continue
            i0 = exp_unit(scale)
            exps = shift_exp_int(ints, i0, N)
            accumulator.add_arrays(exps * (scale / float(1 << N)), np.exp(scale * ints))
            counts['monotonicity_violations'] += int(np.count_nonzero(np.diff(exps) < 0))
            counts['range_violations'] += int(np.count_nonzero((exps < 0) | (exps > (i0 << N))))

        metrics = accumulator.result()
        passed = metrics.max_abs_error <= tolerances.SHIFT_EXP_MAX_ABS and not any(counts.values())
        return [SiteRecord.from_metrics("shift_exp", metrics, reference="exp",
                                        tolerance=tolerances.SHIFT_EXP_MAX_ABS, passed=passed,
                                        extra={key: float(value) for key, value in counts.items()})]


class IntDivSweep(KernelSweepHandler):
    """IntDiv 与宽整数公式逐位比较，并检查比值误差界"""

    kernel = KernelId.INT_DIV

    def default_spec(self) -> InputSpec:
        return InputSpec(low=1, high=(1 << 31) - 1)

    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        if spec.low < 1 or spec.high >= (1 << 31):
            raise InvalidArgumentError("IntDiv 除数范围必须在 [1, 2^31) 内")
        k_out, M = spec.k_out, cfg.int_math.M
        accumulator = MetricsAccumulator()
        counts = {'exact_mismatches': 0, 'bound_violations': 0}
        for rows in _chunks(trials, CHUNK_ROWS * 16):
            divisors = rng.integers(spec.low, spec.high, rows)
            dividends = (rng.next_u64_array(rows) % (divisors + 1).astype(np.uint64)).astype(np.int64)
            out, out_scale = int_div(dividends, divisors, k_out, cfg.int_math, site="sweep.int_div")

            expected = [int_div_scalar(int(a), int(b), k_out, M)
                        for a, b in zip(dividends.tolist(), divisors.tolist())]
            counts['exact_mismatches'] += int(np.count_nonzero(out != np.array(expected, dtype=np.int64)))

            ratio = dividends / divisors
            approx = out * out_scale
            bound = out_scale * (1.0 + divisors / float(1 << (M - k_out + 1)))
            counts['bound_violations'] += int(np.count_nonzero(np.abs(approx - ratio) > bound + 1e-12))
            accumulator.add_arrays(approx, ratio)

        metrics = accumulator.result()
        return [SiteRecord.from_metrics("int_div", metrics, reference="wide_int",
                                        passed=not any(counts.values()),
                                        extra={key: float(value) for key, value in counts.items()})]


class IsqrtSweep(KernelSweepHandler):
    """整数开方与 floor(sqrt(v)) 比较"""

    kernel = KernelId.ISQRT

    def default_spec(self) -> InputSpec:
        return InputSpec(low=0, high=(1 << 31) - 1)

    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        bounded = spec.model_copy(update={'low': max(spec.low, 0), 'high': max(spec.high, 0)})
        max_diff, count, scalar_mismatches = 0, 0, 0
        chunk_plan = [0] if spec.distribution == InputDistribution.GRID else list(_chunks(trials, CHUNK_ROWS * 16))
        for rows in chunk_plan:
            values = sample_ints(rng, bounded, rows)
            roots = int_isqrt(values, cfg.int_math)
            diff = np.abs(roots - _isqrt(values)) if values.size else roots
            max_diff = max(max_diff, int(diff.max()) if diff.size else 0)
            count += int(values.size)
            for value, root in list(zip(values.tolist(), roots.tolist()))[:SCALAR_ROWS]:
                if isqrt_scalar(value, cfg.int_math.iters) != root:
                    scalar_mismatches += 1

        record = SiteRecord(site="isqrt", reference="math.isqrt", count=count, rows=count,
                            max_abs_error=float(max_diff),
                            tolerance=float(tolerances.ISQRT_MAX_DIFF),
                            passed=max_diff <= tolerances.ISQRT_MAX_DIFF and scalar_mismatches == 0,
                            extra={'scalar_mismatches': float(scalar_mismatches)})
        return [record]


class RequantizeSweep(KernelSweepHandler):
    """
    二进分数重量化误差(以输出 LSB 计)

    每组同时检查完整 32 位累加器和右移到 |I| <= 2^24 的累加器。b 的舍入误差贡献
    |I|·2^(-c-1) LSB，因此 0.51 LSB 只对后者成立；完整 32 位累加器按解析上界检查。
    """

    kernel = KernelId.REQUANTIZE

    def default_spec(self) -> InputSpec:
        return InputSpec(low=-INT32_MAX, high=INT32_MAX)

    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        narrow_metrics, wide_metrics = MetricsAccumulator(), MetricsAccumulator()
        worst_bound_excess = 0.0
        peak = max(abs(spec.low), abs(spec.high))
        narrow_shift = max(peak.bit_length() - REQUANT_NARROW_BITS, 0)
        for rows in _chunks(trials, REQUANT_GROUP):
            wide = rng.integers(spec.low, spec.high, rows)
            # 比值 r ∈ (2^-12, 1]
            ratio = float(2.0 ** (-12.0 * rng.uniform(1)[0]))
            dyadic = to_dyadic(ratio, cfg.dyadic_shift)
            narrow = np.right_shift(wide, narrow_shift)
            for metrics, acc in ((narrow_metrics, narrow), (wide_metrics, wide)):
                out = requantize(QTensor(data=acc, scale=1.0, bits=32), dyadic, 32, 1.0 / ratio,
                                 rounding=cfg.requant_rounding, site="sweep.requantize")
                exact = ratio * acc.astype(np.float64)
                metrics.add_arrays(out.data.astype(np.float64), exact)
                bound = 0.5 + np.abs(acc) * 2.0 ** (-dyadic.c - 1)
                if cfg.requant_rounding == RequantRounding.FLOOR:
                    bound = bound + 0.5
                worst_bound_excess = max(worst_bound_excess,
                                         float(np.max(np.abs(out.data - exact) - bound)))

        limit = tolerances.REQUANT_MAX_LSB
        if cfg.requant_rounding == RequantRounding.FLOOR:
            limit += 0.5
        narrow_result, wide_result = narrow_metrics.result(), wide_metrics.result()
        # |I| < 2^31 时 b 的舍入最多再贡献 2^(30-c) LSB
        wide_limit = limit + 2.0 ** (30 - cfg.dyadic_shift)
        within_bound = worst_bound_excess <= 1e-6
        return [
            SiteRecord.from_metrics("requantize", narrow_result, reference="real_rescale",
                                    tolerance=limit,
                                    passed=narrow_result.max_abs_error <= limit and within_bound,
                                    extra={'worst_bound_excess': worst_bound_excess}),
            SiteRecord.from_metrics("requantize.int32", wide_result, reference="real_rescale",
                                    tolerance=wide_limit,
                                    passed=wide_result.max_abs_error <= wide_limit and within_bound),
        ]


class LayerNormSweep(KernelSweepHandler):
    """I-LayerNorm(γ=1, β=0) 与浮点 LayerNorm 比较，并检查输出行标准差"""

    kernel = KernelId.I_LAYERNORM

    def default_spec(self) -> InputSpec:
        return InputSpec(distribution=InputDistribution.GAUSSIAN, width=64, std=50.0,
                         scales=[1 / 16], low=-127, high=127)

    def params(self, width: int, cfg: KernelConfig) -> LayerNormParams:
        p = cfg.layernorm_precision
        gamma = QTensor(data=np.full(width, 127), scale=1.0 / 127.0, bits=8)
        affine_scale = gamma.scale / float(1 << p)
        beta = QTensor(data=np.zeros(width, dtype=np.int64), scale=affine_scale, bits=32)
        out_scale = QuantParams.from_clip(8.0, 8).S
        return LayerNormParams(site="sweep.i_layernorm", gamma=gamma, beta=beta, p=p,
                               out_scale=out_scale, out_bits=8,
                               out_requant=dyadic_for(affine_scale / out_scale, cfg.dyadic_shift))

    def sweep(self, spec: InputSpec, trials: int, rng: Rng, cfg: KernelConfig) -> List[SiteRecord]:
        if spec.width < 2:
            raise InvalidArgumentError("LayerNorm 行长度必须 >= 2")
        params = self.params(spec.width, cfg)
        accumulator = MetricsAccumulator()
        worst_std = 0.0
        ones, zeros = np.ones(spec.width), np.zeros(spec.width)
        for rows in _chunks(trials, CHUNK_ROWS):
            ints = sample_ints(rng, spec, rows * spec.width).reshape(rows, spec.width)
            # 常数行没有定义良好的标准差，跳过
            ints = ints[ints.std(axis=-1) > 0]
            if ints.size == 0:
                continue
            out = i_layernorm(QTensor(data=ints, scale=spec.scales[0], bits=8), params,
                              cfg=cfg.int_math, rounding=cfg.requant_rounding)
            approx = out.data * params.out_scale
            accumulator.add_arrays(approx, layernorm_array(spec.scales[0] * ints, ones, zeros))
            worst_std = max(worst_std, float(np.max(np.abs(approx.std(axis=-1) - 1.0))))

        metrics = accumulator.result()
        passed = (metrics.max_abs_error <= tolerances.LAYERNORM_MAX_ABS
                  and worst_std <= tolerances.LAYERNORM_STD_REL)
        return [SiteRecord.from_metrics("i_layernorm", metrics, reference="fp_layernorm",
                                        tolerance=tolerances.LAYERNORM_MAX_ABS, passed=passed,
                                        extra={'worst_std_deviation': worst_std})]


class KernelSweepFactory:
    """算子扫描处理器工厂类"""

    _handlers = {
        KernelId.SHIFTMAX: ShiftmaxSweep(),
        KernelId.SHIFT_GELU: ShiftGeluSweep(),
        KernelId.SHIFT_EXP: ShiftExpSweep(),
        KernelId.INT_DIV: IntDivSweep(),
        KernelId.ISQRT: IsqrtSweep(),
        KernelId.REQUANTIZE: RequantizeSweep(),
        KernelId.I_LAYERNORM: LayerNormSweep(),
    }

    @classmethod
    def get_handler(cls, kernel: str) -> KernelSweepHandler:
        """
        根据算子编号获取扫描处理器

        Raises:
            UnknownKernelError: 未知的算子编号
        """
        try:
            return cls._handlers[KernelId(str(kernel).lower())]
        except ValueError:
            raise UnknownKernelError(
                f"未知算子: {kernel}，支持: {', '.join(cls.get_supported_kernels())}") from None

    @classmethod
    def execute_sweep(cls, kernel: str, spec: Optional[InputSpec], trials: int, seed: int,
                      kernel_config: Optional[KernelConfig] = None,
                      run_config: Optional[RunConfig] = None) -> ErrorReport:
        """
        执行一次算子扫描

        Args:
            kernel: 算子编号
            spec: 输入分布，默认使用处理器的验收分布
            trials: 采样次数，0 时返回空报告
            seed: 随机种子
            kernel_config: 算子配置
            run_config: 嵌入报告的运行配置

        Returns:
            误差报告(给定种子时逐字节确定)
        """
        handler = cls.get_handler(kernel)
        if trials < 0:
            raise InvalidArgumentError(f"trials 不能为负: {trials}")
        spec = spec or handler.default_spec()
        cfg = kernel_config or KernelConfig.from_settings()

        saturation_tracker.reset()
        records = handler.sweep(spec, trials, Rng(seed), cfg) if trials > 0 else []
        for record in records:
            logger.info(f"扫描 {record.site}: max={record.max_abs_error:.6g}, "
                        f"mean={record.mean_abs_error:.6g}, passed={record.passed}")

        report = ErrorReport(title=f"kernel-test {handler.kernel.value}", seed=seed,
                             run_config=run_config, tolerances=handler.tolerances(),
                             records=records, saturation=saturation_tracker.snapshot())
        return report.finalize()

    @classmethod
    def get_supported_kernels(cls) -> List[str]:
        return [kernel.value for kernel in cls._handlers]
