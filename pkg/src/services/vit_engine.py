"""
整数 ViT 推理引擎

前向全程只做整数运算: 线性层经二进分数重量化，Softmax / GELU / LayerNorm 使用移位近似。
构建期已把所有尺度折算为二进分数和整数常量，推理时实数尺度只作为元数据携带。
"""

from typing import List, Sequence

import numpy as np

from ..models.tensor_models import FpTensor, QTensor
from ..models.vit_models import QViTModel, BlockWeights, LayerNormParams, AttentionScales, GeluScales
from .error_handler import ShapeMismatchError, InvalidArgumentError
from .fp_oracle import softmax_array, gelu_array, layernorm_array, GeluForm
from .int_kernels import im2col, int_dense, int_matmul, residual_add
from .integer_audit import integer_only
from .quantizer import quantize, dequantize, quantize_at_scale
from .shift_kernels import shiftmax, shift_gelu, i_layernorm
from ..tasks.batch_runner import BatchRunner
from ..utils.logger import get_logger

logger = get_logger("vit_engine")


class IntViTEngine:
    """
    量化 ViT 的前向执行器

    nonlinear_fallback=True 时 Softmax、GELU、LayerNorm 改为 反量化 -> 64 位实数运算 -> 量化
    (线性层仍为整数)，作为非线性算子浮点回退的对照；该模式不开启整数审计。
    """

    def __init__(self, model: QViTModel, nonlinear_fallback: bool = False,
                 fallback_gelu: GeluForm = GeluForm.ERF):
        self.model = model
        self.config = model.config
        self.int_math = model.kernel_config.int_math
        self.rounding = model.kernel_config.requant_rounding
        self.nonlinear_fallback = nonlinear_fallback
        self.fallback_gelu = GeluForm(fallback_gelu)

    # ---- 非线性算子(整数或浮点回退) ----

    def _layernorm(self, x: QTensor, params: LayerNormParams) -> QTensor:
        if self.nonlinear_fallback:
            out = layernorm_array(dequantize(x).data, dequantize(params.gamma).data,
                                  dequantize(params.beta).data)
            return quantize_at_scale(out, params.out_scale, params.out_bits)
        return i_layernorm(x, params, cfg=self.int_math, rounding=self.rounding)

    def _softmax(self, scores: QTensor, attention: AttentionScales) -> QTensor:
        if self.nonlinear_fallback:
            probs = softmax_array(dequantize(scores).data)
            return quantize_at_scale(probs, attention.probs_scale, attention.probs_bits)
        return shiftmax(scores, attention.probs_bits, self.int_math, i0=attention.scores_i0,
                        out_scale=attention.probs_scale, site=f"{attention.site}.softmax")

    def _gelu(self, x: QTensor, gelu: GeluScales) -> QTensor:
        if self.nonlinear_fallback:
            out = gelu_array(dequantize(x).data, self.fallback_gelu)
            return quantize_at_scale(out, gelu.out_scale, gelu.out_bits)
        return shift_gelu(x, gelu.sigmoid_bits, self.int_math, i0=gelu.i0,
                          offset_cap=gelu.offset_cap, out_requant=gelu.out_requant,
                          out_scale=gelu.out_scale, out_bits=gelu.out_bits,
                          rounding=self.rounding, site=gelu.site)

    # ---- 网络结构 ----

    def quantize_input(self, img: FpTensor) -> QTensor:
        """按校准的输入尺度量化图像(构建期/推理前调用，不在审计区内)"""
        return quantize(img, self.model.input_params)

    def patch_embed(self, img: QTensor) -> QTensor:
        """
        图像块嵌入: im2col + 整数全连接，拼接类别 token，再与位置嵌入做残差相加

        Args:
            img: (channels, image_size, image_size) 8 位图像

        Returns:
            (num_tokens, d_model) 的 token
        """
        cfg = self.config
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if img.dims != expected:
            raise ShapeMismatchError(f"输入图像形状 {img.dims} 与模型配置 {expected} 不一致")
        if img.scale != self.model.input_params.S:
            raise InvalidArgumentError(f"输入尺度 {img.scale} 与模型输入尺度 {self.model.input_params.S} 不一致")

        patches = img.with_data(im2col(img.data, cfg.patch_size))
        embedded = int_dense(patches, self.model.patch_embed, rounding=self.rounding)
        tokens = embedded.with_data(
            np.concatenate([self.model.cls_token.data[None, :], embedded.data], axis=0))

        residual = self.model.embed_residual
        return residual_add(tokens, self.model.pos_embed, residual.out_scale, residual.out_bits,
                            a_requant=residual.lhs_requant, b_requant=residual.rhs_requant,
                            rounding=self.rounding, site="embed")

    def _split_heads(self, x: QTensor) -> QTensor:
        tokens = x.dims[0]
        heads, head_dim = self.config.heads, self.config.head_dim
        return x.with_data(x.data.reshape(tokens, heads, head_dim).transpose(1, 0, 2))

    def msa_forward(self, x: QTensor, block: BlockWeights) -> QTensor:
        """
        多头自注意力: Q/K/V 全连接，逐头 Q·K^T(1/√d 折入二进分数) -> Shiftmax -> ·V，
        拼接各头后做输出投影

        Args:
            x: (tokens, d_model) 的 LayerNorm 输出
            block: 块参数
        """
        if x.dims[-1] != self.config.d_model:
            raise ShapeMismatchError(f"注意力输入宽度 {x.dims[-1]} != d_model {self.config.d_model}")
        attention = block.attention
        q = self._split_heads(int_dense(x, block.q, rounding=self.rounding))
        k = self._split_heads(int_dense(x, block.k, rounding=self.rounding))
        v = self._split_heads(int_dense(x, block.v, rounding=self.rounding))

        scores = int_matmul(q, k, attention.scores_scale, attention.scores_bits,
                            requant=attention.scores_requant, rounding=self.rounding,
                            site=f"{attention.site}.scores")
        probs = self._softmax(scores, attention)
        # probs·V = probs·(V^T)^T
        v_t = v.with_data(np.swapaxes(v.data, -1, -2))
        context = int_matmul(probs, v_t, attention.context_scale, self.config.k_activation,
                             requant=attention.context_requant, rounding=self.rounding,
                             site=f"{attention.site}.context")

        tokens = x.dims[0]
        merged = context.with_data(context.data.transpose(1, 0, 2).reshape(tokens, self.config.d_model))
        return int_dense(merged, block.o, rounding=self.rounding)

    def mlp_forward(self, x: QTensor, block: BlockWeights) -> QTensor:
        """MLP: 全连接 -> ShiftGELU -> 全连接"""
        hidden = int_dense(x, block.fc1, rounding=self.rounding)
        activated = self._gelu(hidden, block.gelu)
        return int_dense(activated, block.fc2, rounding=self.rounding)

    def block_forward(self, x: QTensor, block: BlockWeights) -> QTensor:
        """x̂ = MSA(LN(x)) + x；y = MLP(LN(x̂)) + x̂"""
        attended = self.msa_forward(self._layernorm(x, block.ln1), block)
        res1 = block.res1
        x_hat = residual_add(attended, x, res1.out_scale, res1.out_bits,
                             a_requant=res1.lhs_requant, b_requant=res1.rhs_requant,
                             rounding=self.rounding, site=res1.site)

        transformed = self.mlp_forward(self._layernorm(x_hat, block.ln2), block)
        res2 = block.res2
        return residual_add(transformed, x_hat, res2.out_scale, res2.out_bits,
                            a_requant=res2.lhs_requant, b_requant=res2.rhs_requant,
                            rounding=self.rounding, site=res2.site)

    def model_forward(self, img: QTensor, audit: bool = True) -> QTensor:
        """
        完整前向

        Args:
            img: 已量化的输入图像
            audit: 开启整数审计(浮点回退模式下忽略)

        Returns:
            长度 num_classes 的 32 位 logits(尺度 S_norm·S_head，不钳位)
        """
        with integer_only(audit and not self.nonlinear_fallback):
            x = self.patch_embed(img)
            for block in self.model.blocks:
                x = self.block_forward(x, block)
            x = self._layernorm(x, self.model.norm)
            cls_row = x.with_data(x.data[0])
            return int_dense(cls_row, self.model.head, rounding=self.rounding)

    def forward_image(self, img: FpTensor, audit: bool = True) -> QTensor:
        """浮点图像 -> 量化 -> 整数前向"""
        return self.model_forward(self.quantize_input(img), audit=audit)

    def forward_batch(self, images: Sequence[QTensor], workers: int = None,
                      audit: bool = True) -> List[QTensor]:
        """
        批量前向，逐张图像独立执行(可多线程)，结果顺序与输入一致

        Args:
            images: 已量化的输入图像
            workers: 线程数，默认 settings.batch_workers
            audit: 开启整数审计
        """
        return BatchRunner(workers).run(lambda img: self.model_forward(img, audit=audit), images)


def argmax_rows(logits: Sequence[QTensor]) -> List[int]:
    """整数 logits 的 argmax(与尺度无关)"""
    return [int(np.argmax(item.data)) for item in logits]
