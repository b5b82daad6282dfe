"""
模型构建: 浮点权重生成、校准统计收集、量化模型构建与尺度图校验
"""

import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import settings
from ..models.tensor_models import FpTensor
from ..models.quant_models import QuantParams, DyadicScale, KernelConfig
from ..models.vit_models import (
    ModelConfig, FpViTWeights, QViTModel, DenseWeights, LayerNormParams, AttentionScales,
    ResidualScales, GeluScales, BlockWeights, CalibrationStats, CalibrationMethod, SiteRange,
)
from .error_handler import ModelBuildError, InvalidArgumentError, IViTError
from .fp_oracle import FpViT, GeluForm
from .int_math import exp_unit, INT_DIV_HEADROOM_BITS
from .quantizer import calibrate_minmax, quantize, quantize_at_scale, dyadic_for
from .rng import Rng, gen_gaussian
from .shift_kernels import gelu_offset_cap, SUM_LIMIT
from ..utils.logger import get_logger

logger = get_logger("model_builder")

DEFAULT_PERCENTILE = 99.99
BLOCK_SITES = ("ln1.out", "attn.q", "attn.k", "attn.v", "attn.scores", "attn.context",
               "attn.out", "res1.out", "ln2.out", "mlp.fc1", "mlp.gelu", "mlp.fc2", "res2.out")


def required_sites(config: ModelConfig) -> List[str]:
    """模型构建需要的全部激活站点(按前向顺序)"""
    sites = ["input", "patch_embed.out", "embed.out"]
    for index in range(config.depth):
        sites.extend(f"blocks.{index}.{name}" for name in BLOCK_SITES)
    sites.append("norm.out")
    return sites


def fp_weight_layout(config: ModelConfig) -> "OrderedDict[str, Tuple[Tuple[int, ...], str]]":
    """
    浮点权重的名称、形状和初始化方式(gaussian / ones / zeros)

    顺序固定，决定随机数消耗顺序。
    """
    d, hidden = config.d_model, config.mlp_hidden
    layout: "OrderedDict[str, Tuple[Tuple[int, ...], str]]" = OrderedDict()
    layout["patch_embed.weight"] = ((d, config.patch_dim), "gaussian")
    layout["patch_embed.bias"] = ((d,), "gaussian")
    layout["cls_token"] = ((d,), "gaussian")
    layout["pos_embed"] = ((config.num_tokens, d), "gaussian")
    for index in range(config.depth):
        prefix = f"blocks.{index}"
        layout[f"{prefix}.ln1.gamma"] = ((d,), "ones")
        layout[f"{prefix}.ln1.beta"] = ((d,), "zeros")
        for proj in ("q", "k", "v", "o"):
            layout[f"{prefix}.attn.{proj}.weight"] = ((d, d), "gaussian")
            layout[f"{prefix}.attn.{proj}.bias"] = ((d,), "gaussian")
        layout[f"{prefix}.ln2.gamma"] = ((d,), "ones")
        layout[f"{prefix}.ln2.beta"] = ((d,), "zeros")
        layout[f"{prefix}.mlp.fc1.weight"] = ((hidden, d), "gaussian")
        layout[f"{prefix}.mlp.fc1.bias"] = ((hidden,), "gaussian")
        layout[f"{prefix}.mlp.fc2.weight"] = ((d, hidden), "gaussian")
        layout[f"{prefix}.mlp.fc2.bias"] = ((d,), "gaussian")
    layout["norm.gamma"] = ((d,), "ones")
    layout["norm.beta"] = ((d,), "zeros")
    layout["head.weight"] = ((config.num_classes, d), "gaussian")
    layout["head.bias"] = ((config.num_classes,), "gaussian")
    return layout


def gen_fp_weights(config: ModelConfig, seed: int, std: Optional[float] = None) -> FpViTWeights:
    """
    生成浮点权重: 线性层和嵌入为 N(0, std^2)，LayerNorm γ=1、β=0

    Args:
        config: 模型结构
        seed: 随机种子
        std: 高斯初始化标准差，默认 settings.init_std
    """
    std = settings.init_std if std is None else std
    rng = Rng(seed)
    tensors: Dict[str, FpTensor] = {}
    for name, (shape, init) in fp_weight_layout(config).items():
        if init == "gaussian":
            tensors[name] = gen_gaussian(rng, shape, 0.0, std)
        elif init == "ones":
            tensors[name] = FpTensor(data=np.ones(shape))
        else:
            tensors[name] = FpTensor(data=np.zeros(shape))
    logger.info(f"生成浮点权重: {len(tensors)} 个张量, seed={seed}, std={std}")
    return FpViTWeights(config=config, tensors=tensors)


def gen_inputs(config: ModelConfig, count: int, seed: int) -> List[FpTensor]:
    """生成 count 张标准高斯输入图像"""
    if count < 0:
        raise InvalidArgumentError(f"输入个数不能为负: {count}")
    rng = Rng(seed)
    dims = (config.channels, config.image_size, config.image_size)
    return [gen_gaussian(rng, dims) for _ in range(count)]


class CalibrationCollector:
    """挂接在浮点前向上的激活统计收集器"""

    def __init__(self, method: CalibrationMethod = CalibrationMethod.MINMAX,
                 percentile: float = DEFAULT_PERCENTILE):
        if not 0.0 < percentile <= 100.0:
            raise InvalidArgumentError(f"分位数必须在 (0, 100] 内: {percentile}")
        self.method = CalibrationMethod(method)
        self.percentile = percentile
        self.num_inputs = 0
        self._absmax: Dict[str, float] = {}
        self._samples: Dict[str, int] = {}
        self._magnitudes: Dict[str, List[np.ndarray]] = {}

    def observe(self, site: str, values: np.ndarray):
        magnitude = np.abs(np.asarray(values, dtype=np.float64)).ravel()
        peak = float(magnitude.max()) if magnitude.size else 0.0
        self._absmax[site] = max(self._absmax.get(site, 0.0), peak)
        self._samples[site] = self._samples.get(site, 0) + int(magnitude.size)
        if self.method == CalibrationMethod.PERCENTILE:
            self._magnitudes.setdefault(site, []).append(magnitude)

    def finalize(self, seed: Optional[int] = None) -> CalibrationStats:
        sites = {}
        for site in sorted(self._absmax):
            percentile_value = None
            if self.method == CalibrationMethod.PERCENTILE:
                values = np.concatenate(self._magnitudes[site])
                percentile_value = float(np.percentile(values, self.percentile))
            sites[site] = SiteRange(absmax=self._absmax[site],
                                    percentile_value=percentile_value,
                                    samples=self._samples[site])
        return CalibrationStats(method=self.method, percentile=self.percentile,
                                num_inputs=self.num_inputs, seed=seed, sites=sites)


def collect_calibration(weights: FpViTWeights, inputs: Sequence[FpTensor],
                        method: CalibrationMethod = CalibrationMethod.MINMAX,
                        percentile: float = DEFAULT_PERCENTILE,
                        gelu: GeluForm = GeluForm.ERF,
                        seed: Optional[int] = None) -> CalibrationStats:
    """
    在浮点前向上收集每个激活站点的范围

    Args:
        weights: 浮点权重
        inputs: 校准输入图像
        method: 校准方法
        percentile: 分位数校准使用的分位
        gelu: 浮点前向使用的 GELU 形式
        seed: 记录到统计中的输入种子
    """
    collector = CalibrationCollector(method, percentile)
    model = FpViT(weights, gelu)
    for image in inputs:
        model.forward(image.data, collector.observe)
        collector.num_inputs += 1
    stats = collector.finalize(seed)
    logger.info(f"校准完成: {stats.num_inputs} 个输入, {len(stats.sites)} 个站点, 方法={stats.method.value}")
    return stats


class QModelBuilder:
    """由浮点权重和校准统计构建 QViTModel；所有二进分数和整数常量在这里预计算"""

    def __init__(self, weights: FpViTWeights, calib: CalibrationStats,
                 kernel_config: Optional[KernelConfig] = None):
        self.weights = weights
        self.config = weights.config
        self.calib = calib
        self.kernel_config = kernel_config or KernelConfig.from_settings()
        self.k = self.config.k_activation

    def _dn(self, ratio: float) -> DyadicScale:
        return dyadic_for(ratio, self.kernel_config.dyadic_shift)

    def _scale(self, site: str, bits: Optional[int] = None) -> float:
        if site not in self.calib.sites:
            raise ModelBuildError(f"缺少校准站点: {site}")
        return QuantParams.from_clip(self.calib.clip_value(site), bits or self.k).S

    def _dense(self, prefix: str, in_scale: float, out_site: Optional[str]) -> DenseWeights:
        weight_fp = self.weights.get(f"{prefix}.weight")
        weight = quantize(weight_fp, calibrate_minmax(weight_fp, 8))
        acc_scale = in_scale * weight.scale
        bias = quantize_at_scale(self.weights.get(f"{prefix}.bias").data, acc_scale, 32)
        if out_site is None:
            return DenseWeights(site=prefix, weight=weight, bias=bias, in_scale=in_scale,
                                acc_scale=acc_scale)
        out_scale = self._scale(out_site)
        return DenseWeights(site=prefix, weight=weight, bias=bias, in_scale=in_scale,
                            acc_scale=acc_scale, out_scale=out_scale, out_bits=self.k,
                            out_requant=self._dn(acc_scale / out_scale))

    def _layernorm(self, prefix: str, out_site: str) -> LayerNormParams:
        gamma_fp = self.weights.get(f"{prefix}.gamma")
        gamma = quantize(gamma_fp, calibrate_minmax(gamma_fp, 8))
        p = self.kernel_config.layernorm_precision
        affine_scale = gamma.scale / float(1 << p)
        beta = quantize_at_scale(self.weights.get(f"{prefix}.beta").data, affine_scale, 32)
        out_scale = self._scale(out_site)
        return LayerNormParams(site=prefix, gamma=gamma, beta=beta, p=p, out_scale=out_scale,
                               out_bits=self.k, out_requant=self._dn(affine_scale / out_scale))

    def _residual(self, site: str, lhs_scale: float, rhs_scale: float) -> ResidualScales:
        out_scale = self._scale(f"{site}.out")
        return ResidualScales(site=site, lhs_scale=lhs_scale, rhs_scale=rhs_scale,
                              out_scale=out_scale, out_bits=self.k,
                              lhs_requant=self._dn(lhs_scale / out_scale),
                              rhs_requant=self._dn(rhs_scale / out_scale))

    def _exp_unit(self, site: str, scale: float) -> int:
        try:
            return exp_unit(scale)
        except IViTError as e:
            raise ModelBuildError(f"{site}: {e}") from e

    def _check_exp_sum(self, site: str, terms: int, i0: int):
        # IntDiv 除数上限: 2^31 与 2^M 的余量取较小者
        int_math = self.kernel_config.int_math
        limit = min(SUM_LIMIT, 1 << (int_math.M - INT_DIV_HEADROOM_BITS))
        bound = terms * (i0 << int_math.N)
        if bound >= limit:
            raise ModelBuildError(
                f"{site}: ΣI_exp 上界 {bound} 超过 {limit} (I_0={i0}, N={int_math.N}, 项数={terms})，"
                f"请减小 N 或使用 8 位注意力分数")

    def _attention(self, index: int, q: DenseWeights, k: DenseWeights,
                   v: DenseWeights) -> AttentionScales:
        cfg = self.config
        site = f"blocks.{index}.attn"
        scores_scale = self._scale(f"{site}.scores", cfg.score_bits)
        scores_i0 = self._exp_unit(f"{site}.scores", scores_scale)
        self._check_exp_sum(f"{site}.scores", cfg.num_tokens, scores_i0)
        probs_scale = 1.0 / float(1 << (cfg.softmax_bits - 1))
        context_scale = self._scale(f"{site}.context")
        return AttentionScales(
            site=site,
            scores_scale=scores_scale,
            scores_bits=cfg.score_bits,
            scores_requant=self._dn(q.out_scale * k.out_scale
                                    / (math.sqrt(cfg.head_dim) * scores_scale)),
            scores_i0=scores_i0,
            probs_bits=cfg.softmax_bits,
            probs_scale=probs_scale,
            context_scale=context_scale,
            context_requant=self._dn(probs_scale * v.out_scale / context_scale),
        )

    def _gelu(self, index: int, in_scale: float) -> GeluScales:
        site = f"blocks.{index}.mlp.gelu"
        i0 = self._exp_unit(site, in_scale)
        # 分母 = 分子 + ShiftExp(-m)，两项各不超过 I_0·2^N
        self._check_exp_sum(site, 2, i0)
        sigmoid_scale = 1.0 / float(1 << (self.config.gelu_bits - 1))
        out_scale = self._scale(site)
        return GeluScales(site=site, in_scale=in_scale, i0=i0,
                          offset_cap=gelu_offset_cap(i0, self.kernel_config.int_math.N),
                          sigmoid_bits=self.config.gelu_bits, out_scale=out_scale,
                          out_bits=self.k,
                          out_requant=self._dn(in_scale * sigmoid_scale / out_scale))

    def _block(self, index: int, in_scale: float) -> BlockWeights:
        prefix = f"blocks.{index}"
        ln1 = self._layernorm(f"{prefix}.ln1", f"{prefix}.ln1.out")
        q = self._dense(f"{prefix}.attn.q", ln1.out_scale, f"{prefix}.attn.q")
        k = self._dense(f"{prefix}.attn.k", ln1.out_scale, f"{prefix}.attn.k")
        v = self._dense(f"{prefix}.attn.v", ln1.out_scale, f"{prefix}.attn.v")
        attention = self._attention(index, q, k, v)
        o = self._dense(f"{prefix}.attn.o", attention.context_scale, f"{prefix}.attn.out")
        res1 = self._residual(f"{prefix}.res1", o.out_scale, in_scale)

        ln2 = self._layernorm(f"{prefix}.ln2", f"{prefix}.ln2.out")
        fc1 = self._dense(f"{prefix}.mlp.fc1", ln2.out_scale, f"{prefix}.mlp.fc1")
        gelu = self._gelu(index, fc1.out_scale)
        fc2 = self._dense(f"{prefix}.mlp.fc2", gelu.out_scale, f"{prefix}.mlp.fc2")
        res2 = self._residual(f"{prefix}.res2", fc2.out_scale, res1.out_scale)
        return BlockWeights(index=index, ln1=ln1, q=q, k=k, v=v, o=o, attention=attention,
                            res1=res1, ln2=ln2, fc1=fc1, gelu=gelu, fc2=fc2, res2=res2)

    def build(self) -> QViTModel:
        missing = [site for site in required_sites(self.config) if site not in self.calib.sites]
        if missing:
            raise ModelBuildError(f"缺少校准站点: {missing[0]}" +
                                  (f" 等 {len(missing)} 个" if len(missing) > 1 else ""))

        input_params = QuantParams.from_clip(self.calib.clip_value("input"), self.k)
        patch_embed = self._dense("patch_embed", input_params.S, "patch_embed.out")
        # 类别 token 与图像块拼接，需与 patch_embed 输出同尺度；位置嵌入直接量化到残差尺度
        cls_token = quantize_at_scale(self.weights.get("cls_token").data, patch_embed.out_scale,
                                      self.k)
        embed_scale = self._scale("embed.out")
        pos_embed = quantize_at_scale(self.weights.get("pos_embed").data, embed_scale, self.k)
        embed_residual = self._residual("embed", patch_embed.out_scale, embed_scale)

        blocks = []
        x_scale = embed_residual.out_scale
        for index in range(self.config.depth):
            block = self._block(index, x_scale)
            blocks.append(block)
            x_scale = block.res2.out_scale

        norm = self._layernorm("norm", "norm.out")
        head = self._dense("head", norm.out_scale, None)
        model = QViTModel(config=self.config, kernel_config=self.kernel_config,
                          calibration_method=self.calib.method, input_params=input_params,
                          patch_embed=patch_embed, cls_token=cls_token, pos_embed=pos_embed,
                          embed_residual=embed_residual, blocks=blocks, norm=norm, head=head)
        logger.info(f"量化模型构建完成: depth={self.config.depth}, "
                    f"二进分数 {sum(1 for _ in dyadic_entries(model))} 个")
        return model


def build_qmodel(weights: FpViTWeights, calib: CalibrationStats,
                 kernel_config: Optional[KernelConfig] = None) -> QViTModel:
    """
    由浮点权重和校准统计构建量化模型

    Args:
        weights: 浮点权重
        calib: 覆盖全部激活站点的校准统计
        kernel_config: 算子配置，默认来自 settings

    Returns:
        通过尺度图校验的量化模型

    Raises:
        ModelBuildError: 缺少站点、尺度不可表示或整数常量越界
    """
    model = QModelBuilder(weights, calib, kernel_config).build()
    verify_scale_graph(model)
    return model


def dyadic_entries(model: QViTModel) -> Iterator[Tuple[str, DyadicScale, float]]:
    """遍历模型中所有二进分数及其应编码的实数比值 (名称, 二进分数, 比值)"""

    def dense(w: DenseWeights):
        if w.out_requant is not None:
            yield f"{w.site}.requant", w.out_requant, w.acc_scale / w.out_scale

    def layernorm(p: LayerNormParams):
        yield f"{p.site}.requant", p.out_requant, p.affine_scale / p.out_scale

    def residual(r: ResidualScales):
        yield f"{r.site}.lhs", r.lhs_requant, r.lhs_scale / r.out_scale
        yield f"{r.site}.rhs", r.rhs_requant, r.rhs_scale / r.out_scale

    yield from dense(model.patch_embed)
    yield from residual(model.embed_residual)
    for block in model.blocks:
        yield from layernorm(block.ln1)
        for w in (block.q, block.k, block.v):
            yield from dense(w)
        attention = block.attention
        yield (f"{attention.site}.scores", attention.scores_requant,
               block.q.out_scale * block.k.out_scale
               / (math.sqrt(model.config.head_dim) * attention.scores_scale))
        yield (f"{attention.site}.context", attention.context_requant,
               attention.probs_scale * block.v.out_scale / attention.context_scale)
        yield from dense(block.o)
        yield from residual(block.res1)
        yield from layernorm(block.ln2)
        yield from dense(block.fc1)
        gelu = block.gelu
        sigmoid_scale = 1.0 / float(1 << (gelu.sigmoid_bits - 1))
        yield f"{gelu.site}.requant", gelu.out_requant, gelu.in_scale * sigmoid_scale / gelu.out_scale
        yield from dense(block.fc2)
        yield from residual(block.res2)
    yield from layernorm(model.norm)


def verify_scale_graph(model: QViTModel) -> int:
    """
    尺度图一致性校验: 由端点尺度重新计算的二进分数必须与存储值完全一致，
    预计算的 I_0 与 GELU 偏移上限也必须可重现

    Returns:
        校验的二进分数个数

    Raises:
        ModelBuildError: 任意一项不一致
    """
    shift = model.kernel_config.dyadic_shift
    count = 0
    for name, stored, ratio in dyadic_entries(model):
        recomputed = dyadic_for(ratio, shift)
        if recomputed != stored:
            raise ModelBuildError(
                f"尺度图不一致: {name} 存储 (b={stored.b}, c={stored.c})，"
                f"重算 (b={recomputed.b}, c={recomputed.c})")
        count += 1

    chain = [(model.patch_embed.in_scale, model.input_params.S, "patch_embed.in")]
    x_scale = model.embed_residual.out_scale
    for block in model.blocks:
        if block.attention.scores_i0 != exp_unit(block.attention.scores_scale):
            raise ModelBuildError(f"尺度图不一致: {block.attention.site}.scores I_0")
        if block.gelu.i0 != exp_unit(block.gelu.in_scale):
            raise ModelBuildError(f"尺度图不一致: {block.gelu.site} I_0")
        if block.gelu.offset_cap != gelu_offset_cap(block.gelu.i0, model.kernel_config.int_math.N):
            raise ModelBuildError(f"尺度图不一致: {block.gelu.site} 偏移上限")
        chain.extend([
            (block.res1.rhs_scale, x_scale, f"{block.res1.site}.rhs"),
            (block.q.in_scale, block.ln1.out_scale, f"{block.q.site}.in"),
            (block.o.in_scale, block.attention.context_scale, f"{block.o.site}.in"),
            (block.res1.lhs_scale, block.o.out_scale, f"{block.res1.site}.lhs"),
            (block.fc1.in_scale, block.ln2.out_scale, f"{block.fc1.site}.in"),
            (block.gelu.in_scale, block.fc1.out_scale, f"{block.gelu.site}.in"),
            (block.fc2.in_scale, block.gelu.out_scale, f"{block.fc2.site}.in"),
            (block.res2.lhs_scale, block.fc2.out_scale, f"{block.res2.site}.lhs"),
            (block.res2.rhs_scale, block.res1.out_scale, f"{block.res2.site}.rhs"),
        ])
        x_scale = block.res2.out_scale
    chain.append((model.head.in_scale, model.norm.out_scale, "head.in"))
    for actual, expected, name in chain:
        if actual != expected:
            raise ModelBuildError(f"尺度链断开: {name} 尺度 {actual} != {expected}")

    logger.debug(f"尺度图校验通过: {count} 个二进分数")
    return count


def scale_summary(model: QViTModel) -> List[Tuple[str, float, float, int]]:
    """激活站点尺度表 (站点, m, S, 位宽)，m = S·(2^k-1)/2"""
    rows = [("input", model.input_params.m, model.input_params.S, model.input_params.k)]

    def add(site: str, scale: float, bits: int):
        rows.append((site, scale * float((1 << bits) - 1) / 2.0, scale, bits))

    add("patch_embed.out", model.patch_embed.out_scale, model.patch_embed.out_bits)
    add("embed.out", model.embed_residual.out_scale, model.embed_residual.out_bits)
    for block in model.blocks:
        prefix = f"blocks.{block.index}"
        add(f"{prefix}.ln1.out", block.ln1.out_scale, block.ln1.out_bits)
        for name, w in (("attn.q", block.q), ("attn.k", block.k), ("attn.v", block.v)):
            add(f"{prefix}.{name}", w.out_scale, w.out_bits)
        add(f"{prefix}.attn.scores", block.attention.scores_scale, block.attention.scores_bits)
        add(f"{prefix}.attn.context", block.attention.context_scale, block.o.out_bits)
        add(f"{prefix}.attn.out", block.o.out_scale, block.o.out_bits)
        add(f"{prefix}.res1.out", block.res1.out_scale, block.res1.out_bits)
        add(f"{prefix}.ln2.out", block.ln2.out_scale, block.ln2.out_bits)
        add(f"{prefix}.mlp.fc1", block.fc1.out_scale, block.fc1.out_bits)
        add(f"{prefix}.mlp.gelu", block.gelu.out_scale, block.gelu.out_bits)
        add(f"{prefix}.mlp.fc2", block.fc2.out_scale, block.fc2.out_bits)
        add(f"{prefix}.res2.out", block.res2.out_scale, block.res2.out_bits)
    add("norm.out", model.norm.out_scale, model.norm.out_bits)
    return rows
