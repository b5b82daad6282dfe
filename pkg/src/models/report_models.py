import math
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .quant_models import KernelConfig
from .vit_models import ModelConfig
from ..services.error_handler import InvalidArgumentError

MODEL_SHAPE_FIELDS = ('image_size', 'patch_size', 'channels', 'd_model', 'heads', 'mlp_ratio',
                      'depth', 'num_classes', 'k_activation')


class KernelId(str, Enum):
    """可扫描验证的算子编号"""
    SHIFTMAX = "shiftmax"
    SHIFT_GELU = "shift_gelu"
    SHIFT_EXP = "shift_exp"
    INT_DIV = "int_div"
    ISQRT = "isqrt"
    REQUANTIZE = "requantize"
    I_LAYERNORM = "i_layernorm"


class CommandName(str, Enum):
    """命令行命令"""
    GEN_MODEL = "gen-model"
    CALIBRATE = "calibrate"
    QUANTIZE = "quantize"
    INFER = "infer"
    INFER_FP = "infer-fp"
    COMPARE = "compare"
    KERNEL_TEST = "kernel-test"


class InputDistribution(str, Enum):
    """扫描输入分布"""
    UNIFORM = "uniform"      # [low, high] 上的均匀整数
    GAUSSIAN = "gaussian"    # 整数域高斯(std 以整数为单位)，钳位到 [low, high]
    GRID = "grid"            # [low, high] 上的全部整数


BASELINE_SLOT_NAMES = ("ibert_poly_softmax", "ibert_poly_gelu", "l1_layernorm",
                       "log_int_softmax", "fp_fallback_nonlinear")


class InputSpec(BaseModel):
    """算子扫描的输入分布描述"""
    distribution: InputDistribution = InputDistribution.UNIFORM
    width: int = 197
    scales: List[float] = [1 / 8, 1 / 16, 1 / 64, 1 / 128]
    low: int = -128
    high: int = 127
    std: float = 50.0
    k_out: int = 8

    @model_validator(mode='after')
    def _check_spec(self) -> 'InputSpec':
        if self.width < 1:
            raise InvalidArgumentError(f"行长度必须 >= 1: {self.width}")
        if not self.scales or any(not (math.isfinite(s) and s > 0) for s in self.scales):
            raise InvalidArgumentError(f"输入尺度必须为有限正数: {self.scales}")
        if self.high < self.low:
            raise InvalidArgumentError(f"输入区间为空: [{self.low}, {self.high}]")
        if self.std < 0:
            raise InvalidArgumentError(f"标准差不能为负: {self.std}")
        if not 2 <= self.k_out <= 16:
            raise InvalidArgumentError(f"k_out 必须在 [2, 16] 内: {self.k_out}")
        return self


class ErrorMetrics(BaseModel):
    """一次比较的误差统计"""
    count: int = 0
    rows: int = 0
    max_abs_error: float = 0.0
    mean_abs_error: float = 0.0
    cosine_similarity: float = 1.0
    argmax_agreement: float = 1.0


class SiteRecord(BaseModel):
    """单个站点 / 算子的误差记录"""
    site: str
    reference: str = ""
    count: int = 0
    rows: int = 0
    max_abs_error: float = 0.0
    mean_abs_error: float = 0.0
    cosine_similarity: float = 1.0
    argmax_agreement: float = 1.0
    tolerance: Optional[float] = None
    passed: bool = True
    clamped: int = 0
    total: int = 0
    extra: Dict[str, float] = {}

    @model_validator(mode='after')
    def _check_metrics(self) -> 'SiteRecord':
        values = [self.max_abs_error, self.mean_abs_error, self.cosine_similarity,
                  self.argmax_agreement, *self.extra.values()]
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgumentError(f"{self.site}: 误差指标必须有限")
        if not 0.0 <= self.argmax_agreement <= 1.0:
            raise InvalidArgumentError(f"{self.site}: argmax 一致率必须在 [0, 1] 内")
        return self

    @classmethod
    def from_metrics(cls, site: str, metrics: ErrorMetrics, **kwargs) -> 'SiteRecord':
        return cls(site=site, **metrics.model_dump(), **kwargs)


class RunConfig(BaseModel):
    """一次命令运行的完整配置，嵌入报告以便复现"""
    command: CommandName
    seed: int = 0
    model: Dict[str, int] = {}
    paths: Dict[str, str] = {}
    requant_rounding: str = "nearest"
    shift_exp_n: int = 15
    int_div_m: int = 47
    isqrt_iters: int = 10
    layernorm_precision: int = 15
    dyadic_shift: int = 30
    softmax_bits: int = 8
    gelu_bits: int = 8
    score_bits: int = 8
    batch_workers: int = 1
    num_inputs: int = 0
    trials: int = 0
    kernel: Optional[KernelId] = None
    input_spec: Optional[InputSpec] = None
    calibration_method: str = "minmax"
    fallback_nonlinear: bool = False

    def with_model(self, config: ModelConfig,
                   kernel_config: Optional[KernelConfig] = None) -> 'RunConfig':
        """填入模型的结构与非线性位宽；给出 kernel_config 时以模型构建时的算子配置为准"""
        update: Dict[str, Any] = {
            'model': {name: getattr(config, name) for name in MODEL_SHAPE_FIELDS},
            'softmax_bits': config.softmax_bits,
            'gelu_bits': config.gelu_bits,
            'score_bits': config.score_bits,
        }
        if kernel_config is not None:
            update.update(shift_exp_n=kernel_config.int_math.N, int_div_m=kernel_config.int_math.M,
                          isqrt_iters=kernel_config.int_math.iters,
                          requant_rounding=kernel_config.requant_rounding.value,
                          layernorm_precision=kernel_config.layernorm_precision,
                          dyadic_shift=kernel_config.dyadic_shift)
        return self.model_copy(update=update)


class ErrorReport(BaseModel):
    """误差报告: 逐站点记录 + 全局元数据"""
    title: str
    seed: int = 0
    passed: bool = True
    run_config: Optional[RunConfig] = None
    tolerances: Dict[str, float] = {}
    records: List[SiteRecord] = []
    saturation: Dict[str, Dict[str, int]] = {}
    baseline_slots: Dict[str, Optional[float]] = Field(
        default_factory=lambda: {name: None for name in BASELINE_SLOT_NAMES})

    @field_validator('tolerances')
    @classmethod
    def _check_tolerances(cls, value: Dict[str, float]) -> Dict[str, float]:
        if not all(math.isfinite(v) for v in value.values()):
            raise InvalidArgumentError("容差必须有限")
        return value

    def record(self, site: str) -> SiteRecord:
        for item in self.records:
            if item.site == site:
                return item
        raise InvalidArgumentError(f"报告中没有站点: {site}")

    def finalize(self) -> 'ErrorReport':
        """由各记录汇总通过状态"""
        return self.model_copy(update={'passed': all(item.passed for item in self.records)})
