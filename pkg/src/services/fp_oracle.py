"""
浮点参考实现(64 位实数)

Softmax、两种形式的 GELU、LayerNorm 以及完整的 ViT 前向。
fp_forward 可挂接观察器，在每个激活站点回调 (site, 数组)，用于校准统计。
"""

import math
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from ..models.tensor_models import FpTensor
from ..models.vit_models import FpViTWeights
from .error_handler import ShapeMismatchError, InvalidArgumentError
from .int_kernels import im2col
from ..utils.logger import get_logger

logger = get_logger("fp_oracle")

ArrayLike = Union[FpTensor, np.ndarray]
SiteObserver = Callable[[str, np.ndarray], None]

LAYERNORM_EPS = 0.0
GELU_SIGMOID_COEFF = 1.702

_erf = np.vectorize(math.erf, otypes=[np.float64])


class GeluForm(str, Enum):
    """GELU 的两种浮点形式"""
    ERF = "erf"          # x·Φ(x)
    SIGMOID = "sigmoid"  # x·σ(1.702x)


def _values(x: ArrayLike) -> np.ndarray:
    return x.data if isinstance(x, FpTensor) else np.asarray(x, dtype=np.float64)


def softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def gelu_erf_array(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def gelu_sigmoid_array(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-GELU_SIGMOID_COEFF * x))


def layernorm_array(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    std = np.sqrt(variance + LAYERNORM_EPS)
    # 常数行: 归一化结果取 0
    normalized = np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)
    return normalized * gamma + beta


def fp_softmax(x: ArrayLike) -> FpTensor:
    """逐行 Softmax(先减去行最大值)"""
    return FpTensor(data=softmax_array(_values(x)))


def fp_gelu_erf(x: ArrayLike) -> FpTensor:
    """精确 GELU: x·Φ(x)"""
    return FpTensor(data=gelu_erf_array(_values(x)))


def fp_gelu_sigmoid(x: ArrayLike) -> FpTensor:
    """Sigmoid 近似 GELU: x·σ(1.702x)，ShiftGELU 的逼近目标"""
    return FpTensor(data=gelu_sigmoid_array(_values(x)))


def fp_layernorm(x: ArrayLike, gamma: ArrayLike, beta: ArrayLike) -> FpTensor:
    """
    逐行 LayerNorm(总体方差)

    Args:
        x: 最后一维为隐藏维
        gamma, beta: 长度等于隐藏维的仿射参数
    """
    values = _values(x)
    gamma_values, beta_values = _values(gamma), _values(beta)
    if gamma_values.shape != (values.shape[-1],) or beta_values.shape != gamma_values.shape:
        raise ShapeMismatchError(f"γ/β 形状与隐藏维 {values.shape[-1]} 不一致")
    return FpTensor(data=layernorm_array(values, gamma_values, beta_values))


def gelu_array(x: np.ndarray, form: GeluForm) -> np.ndarray:
    if form == GeluForm.SIGMOID:
        return gelu_sigmoid_array(x)
    return gelu_erf_array(x)


class FpViT:
    """按名称读取平铺权重的浮点 ViT 前向"""

    def __init__(self, weights: FpViTWeights, gelu: GeluForm = GeluForm.ERF):
        self.weights = weights
        self.config = weights.config
        self.gelu = GeluForm(gelu)

    def _w(self, name: str) -> np.ndarray:
        return self.weights.get(name).data

    def _dense(self, x: np.ndarray, prefix: str) -> np.ndarray:
        return x @ self._w(f"{prefix}.weight").T + self._w(f"{prefix}.bias")

    def _layernorm(self, x: np.ndarray, prefix: str) -> np.ndarray:
        return layernorm_array(x, self._w(f"{prefix}.gamma"), self._w(f"{prefix}.beta"))

    def _attention(self, x: np.ndarray, prefix: str, observe: SiteObserver) -> np.ndarray:
        cfg = self.config
        tokens = x.shape[0]
        q = self._dense(x, f"{prefix}.attn.q")
        k = self._dense(x, f"{prefix}.attn.k")
        v = self._dense(x, f"{prefix}.attn.v")
        observe(f"{prefix}.attn.q", q)
        observe(f"{prefix}.attn.k", k)
        observe(f"{prefix}.attn.v", v)

        # (heads, tokens, head_dim)
        q_h = q.reshape(tokens, cfg.heads, cfg.head_dim).transpose(1, 0, 2)
        k_h = k.reshape(tokens, cfg.heads, cfg.head_dim).transpose(1, 0, 2)
        v_h = v.reshape(tokens, cfg.heads, cfg.head_dim).transpose(1, 0, 2)

        scores = q_h @ k_h.transpose(0, 2, 1) / math.sqrt(cfg.head_dim)
        observe(f"{prefix}.attn.scores", scores)
        probs = softmax_array(scores)
        context = probs @ v_h
        observe(f"{prefix}.attn.context", context)

        merged = context.transpose(1, 0, 2).reshape(tokens, cfg.d_model)
        out = self._dense(merged, f"{prefix}.attn.o")
        observe(f"{prefix}.attn.out", out)
        return out

    def _mlp(self, x: np.ndarray, prefix: str, observe: SiteObserver) -> np.ndarray:
        hidden = self._dense(x, f"{prefix}.mlp.fc1")
        observe(f"{prefix}.mlp.fc1", hidden)
        activated = gelu_array(hidden, self.gelu)
        observe(f"{prefix}.mlp.gelu", activated)
        out = self._dense(activated, f"{prefix}.mlp.fc2")
        observe(f"{prefix}.mlp.fc2", out)
        return out

    def embed(self, image: np.ndarray, observe: SiteObserver) -> np.ndarray:
        cfg = self.config
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if image.shape != expected:
            raise ShapeMismatchError(f"输入图像形状 {image.shape} 与配置 {expected} 不一致")
        observe("input", image)
        patches = self._dense(im2col(image, cfg.patch_size), "patch_embed")
        tokens = np.concatenate([self._w("cls_token")[None, :], patches], axis=0)
        observe("patch_embed.out", tokens)
        x = tokens + self._w("pos_embed")
        observe("embed.out", x)
        return x

    def block(self, x: np.ndarray, index: int, observe: SiteObserver) -> np.ndarray:
        prefix = f"blocks.{index}"
        normed = self._layernorm(x, f"{prefix}.ln1")
        observe(f"{prefix}.ln1.out", normed)
        x = self._attention(normed, prefix, observe) + x
        observe(f"{prefix}.res1.out", x)

        normed = self._layernorm(x, f"{prefix}.ln2")
        observe(f"{prefix}.ln2.out", normed)
        x = self._mlp(normed, prefix, observe) + x
        observe(f"{prefix}.res2.out", x)
        return x

    def forward(self, image: np.ndarray, observe: Optional[SiteObserver] = None) -> np.ndarray:
        observe = observe or (lambda site, values: None)
        x = self.embed(image, observe)
        for index in range(self.config.depth):
            x = self.block(x, index, observe)
        x = self._layernorm(x, "norm")
        observe("norm.out", x)
        return self._dense(x[0], "head")


def fp_forward(weights: FpViTWeights, img: FpTensor, gelu: GeluForm = GeluForm.ERF,
               observer: Optional[SiteObserver] = None) -> FpTensor:
    """
    浮点 ViT 前向

    Args:
        weights: 浮点权重
        img: (channels, image_size, image_size) 输入图像
        gelu: GELU 形式
        observer: 激活站点观察器

    Returns:
        长度为 num_classes 的 logits
    """
    if not isinstance(img, FpTensor):
        raise InvalidArgumentError("fp_forward 需要浮点输入图像")
    logits = FpViT(weights, gelu).forward(img.data, observer)
    return FpTensor(data=logits)
