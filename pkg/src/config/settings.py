from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    # 日志配置
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # 整数算子配置
    shift_exp_n: int = 15          # ShiftExp 左移余量 N
    int_div_m: int = 47            # IntDiv 精度指数 M
    isqrt_iters: int = 10          # 整数开方迭代次数
    dyadic_shift: int = 30         # 二进分数默认移位 c
    requant_rounding: str = "nearest"  # nearest | floor
    layernorm_precision: int = 15  # I-LayerNorm 归一化精度 p

    # 非线性算子输出位宽
    softmax_out_bits: int = 8
    gelu_out_bits: int = 8
    score_bits: int = 8            # Shiftmax 输入(注意力分数)位宽

    # 运行配置
    batch_workers: int = 1
    default_seed: int = 0
    init_std: float = 0.02

    class Config:
        env_file = ".env"
        env_file_encoding = 'utf-8'
        case_sensitive = False


# 全局设置实例
settings = Settings()
