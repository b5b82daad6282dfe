import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, model_validator

from .tensor_models import FpTensor, QTensor
from .quant_models import QuantParams, DyadicScale, KernelConfig
from ..services.error_handler import InvalidArgumentError


class CalibrationMethod(str, Enum):
    """校准方法枚举"""
    MINMAX = "minmax"
    PERCENTILE = "percentile"


class ModelConfig(BaseModel):
    """ViT 结构配置"""
    model_config = ConfigDict(frozen=True)

    image_size: int = 16
    patch_size: int = 4
    channels: int = 3
    d_model: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    depth: int = 2
    num_classes: int = 100
    k_activation: int = 8
    softmax_bits: int = 8
    gelu_bits: int = 8
    score_bits: int = 8

    @model_validator(mode='after')
    def _check_topology(self) -> 'ModelConfig':
        for field in ('image_size', 'patch_size', 'channels', 'd_model', 'heads',
                      'mlp_ratio', 'num_classes'):
            if getattr(self, field) <= 0:
                raise InvalidArgumentError(f"{field} 必须为正: {getattr(self, field)}")
        if self.depth < 0:
            raise InvalidArgumentError(f"depth 不能为负: {self.depth}")
        if self.d_model % self.heads != 0:
            raise InvalidArgumentError(
                f"d_model 必须能被 heads 整除: d_model={self.d_model}, heads={self.heads}")
        if self.image_size % self.patch_size != 0:
            raise InvalidArgumentError(
                f"image_size 必须能被 patch_size 整除: "
                f"image_size={self.image_size}, patch_size={self.patch_size}")
        if self.k_activation != 8:
            # 线性算子只接受 8 位输入
            raise InvalidArgumentError(f"k_activation 目前只支持 8: {self.k_activation}")
        if self.score_bits not in (8, 16):
            raise InvalidArgumentError(f"score_bits 必须是 8 或 16: {self.score_bits}")
        for field in ('softmax_bits', 'gelu_bits'):
            if not 2 <= getattr(self, field) <= 8:
                raise InvalidArgumentError(f"{field} 必须在 [2, 8] 内: {getattr(self, field)}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size ** 2

    @property
    def num_tokens(self) -> int:
        # 类别 token + 图像块
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size ** 2

    @property
    def mlp_hidden(self) -> int:
        return self.mlp_ratio * self.d_model


class DenseWeights(BaseModel):
    """
    整数全连接层: W 为 8 位，bias 为尺度 S_in·S_W 的 32 位整数，
    out_requant 编码 S_in·S_W/S_out；out_requant 为空时直接输出 32 位累加器(分类头)
    acc_scale 由构建器预先算好，推理时只复制不计算
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    site: str
    weight: QTensor
    bias: QTensor
    in_scale: float
    acc_scale: float
    out_scale: Optional[float] = None
    out_bits: int = 32
    out_requant: Optional[DyadicScale] = None

    @model_validator(mode='after')
    def _check_alignment(self) -> 'DenseWeights':
        if len(self.weight.dims) != 2:
            raise InvalidArgumentError(f"{self.site}: 权重必须是二维 (out, in)")
        if self.bias.dims != (self.weight.dims[0],):
            raise InvalidArgumentError(f"{self.site}: bias 形状与权重输出维度不一致")
        if not math.isclose(self.acc_scale, self.in_scale * self.weight.scale, rel_tol=1e-12):
            raise InvalidArgumentError(f"{self.site}: acc_scale 必须等于 S_in·S_W")
        if self.bias.scale != self.acc_scale:
            raise InvalidArgumentError(f"{self.site}: bias 尺度必须等于 S_in·S_W")
        if (self.out_requant is None) != (self.out_scale is None):
            raise InvalidArgumentError(f"{self.site}: out_requant 与 out_scale 必须同时给出")
        return self


class LayerNormParams(BaseModel):
    """I-LayerNorm 参数: γ 为 8 位，β 对齐到 2^-p·S_γ 的 32 位整数"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    site: str
    gamma: QTensor
    beta: QTensor
    p: int = 15
    out_scale: float
    out_bits: int = 8
    out_requant: DyadicScale

    @model_validator(mode='after')
    def _check_alignment(self) -> 'LayerNormParams':
        if self.beta.scale != self.affine_scale:
            raise InvalidArgumentError(f"{self.site}: β 尺度必须等于 2^-p·S_γ")
        if self.gamma.dims != self.beta.dims:
            raise InvalidArgumentError(f"{self.site}: γ 与 β 形状不一致")
        return self

    @property
    def affine_scale(self) -> float:
        return self.gamma.scale / float(1 << self.p)


class AttentionScales(BaseModel):
    """注意力中的两次矩阵乘与 Shiftmax 所需的预计算整数"""
    model_config = ConfigDict(frozen=True)

    site: str
    scores_scale: float
    scores_bits: int
    scores_requant: DyadicScale    # DN(S_Q·S_K/(√d·S_A))
    scores_i0: int                 # round(1/S_A)
    probs_bits: int
    probs_scale: float             # 1/2^(probs_bits-1)
    context_scale: float
    context_requant: DyadicScale   # DN(S_P·S_V/S_ctx)

    @model_validator(mode='after')
    def _check_probs_scale(self) -> 'AttentionScales':
        if self.probs_scale != 1.0 / float(1 << (self.probs_bits - 1)):
            raise InvalidArgumentError(f"{self.site}: probs_scale 必须等于 1/2^(probs_bits-1)")
        return self


class ResidualScales(BaseModel):
    """残差相加: 两个操作数各自对齐到输出尺度"""
    model_config = ConfigDict(frozen=True)

    site: str
    lhs_scale: float
    rhs_scale: float
    out_scale: float
    out_bits: int = 8
    lhs_requant: DyadicScale
    rhs_requant: DyadicScale


class GeluScales(BaseModel):
    """ShiftGELU 的预计算整数和输出重量化"""
    model_config = ConfigDict(frozen=True)

    site: str
    in_scale: float
    i0: int
    offset_cap: int
    sigmoid_bits: int
    out_scale: float
    out_bits: int = 8
    out_requant: DyadicScale       # DN(S_in·S_σ/S_out)


class BlockWeights(BaseModel):
    """一个 Transformer 块的全部整数参数"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    index: int
    ln1: LayerNormParams
    q: DenseWeights
    k: DenseWeights
    v: DenseWeights
    o: DenseWeights
    attention: AttentionScales
    res1: ResidualScales
    ln2: LayerNormParams
    fc1: DenseWeights
    gelu: GeluScales
    fc2: DenseWeights
    res2: ResidualScales


class QViTModel(BaseModel):
    """量化 ViT: 整数权重、逐张量尺度、预计算的二进分数和拓扑"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    config: ModelConfig
    kernel_config: KernelConfig
    calibration_method: CalibrationMethod = CalibrationMethod.MINMAX
    input_params: QuantParams
    patch_embed: DenseWeights
    cls_token: QTensor
    pos_embed: QTensor
    embed_residual: ResidualScales
    blocks: List[BlockWeights] = []
    norm: LayerNormParams
    head: DenseWeights


class FpViTWeights(BaseModel):
    """浮点 ViT 权重，按名称平铺存放(patch_embed.weight、blocks.0.attn.q.weight ...)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    config: ModelConfig
    tensors: Dict[str, FpTensor]

    def get(self, name: str) -> FpTensor:
        if name not in self.tensors:
            raise InvalidArgumentError(f"浮点权重缺少张量: {name}")
        return self.tensors[name]


class SiteRange(BaseModel):
    """单个激活站点的校准统计"""
    absmax: float
    percentile_value: Optional[float] = None
    samples: int = 0


class CalibrationStats(BaseModel):
    """所有激活站点的校准统计"""
    method: CalibrationMethod = CalibrationMethod.MINMAX
    percentile: float = 99.99
    num_inputs: int = 0
    seed: Optional[int] = None
    sites: Dict[str, SiteRange] = {}

    def clip_value(self, site: str) -> float:
        """
        站点截断值 m；全零站点退化为 1

        Raises:
            KeyError 由调用方转换为构建错误
        """
        record = self.sites[site]
        if self.method == CalibrationMethod.PERCENTILE and record.percentile_value is not None:
            m = record.percentile_value
        else:
            m = record.absmax
        return m if m > 0 else 1.0
