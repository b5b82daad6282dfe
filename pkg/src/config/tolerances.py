# 固定的验收容差；修改需同时更新 DESIGN.md 中的记录

# Shiftmax(d=197，8 位输入，S ∈ {1/8, 1/16, 1/64, 1/128})
SHIFTMAX_MAX_ABS = 0.04
SHIFTMAX_MEAN_ABS = SHIFTMAX_MAX_ABS / 6

# ShiftGELU 相对 x·σ(1.702x)，S ∈ {1/8, 1/16, 1/64}，I ∈ [-128, 127]
SHIFT_GELU_MAX_ABS = 0.15

# ShiftExp 相对 e^(S·I)；S=1/8 时 I=-2 处误差约 0.096(7/8 对 e^-0.25)
SHIFT_EXP_MAX_ABS = 0.10

# 二进分数重量化误差，单位为输出 LSB(c = 30，|I| <= 2^24)；完整 32 位累加器放宽 2^(30-c)
REQUANT_MAX_LSB = 0.51

# 整数开方与 floor(sqrt(v)) 的最大差
ISQRT_MAX_DIFF = 1

# I-LayerNorm(γ=1, β=0)；10^5 行实测 max 0.1207、std 偏差 0.0316，
# 行 std 最小约 31 时开方 ±1 的理论上界约 0.147 / 0.033
LAYERNORM_MAX_ABS = 0.15
LAYERNORM_STD_REL = 0.045

# 端到端(desk 规模模型，min-max 校准，1000 张图)；实测余弦 0.99407、argmax 一致率 1.0
E2E_COSINE = 0.985
E2E_ARGMAX_AGREEMENT = 0.95

KERNEL_TOLERANCES = {
    'shiftmax.max_abs': SHIFTMAX_MAX_ABS,
    'shiftmax.mean_abs': SHIFTMAX_MEAN_ABS,
    'shift_gelu.max_abs': SHIFT_GELU_MAX_ABS,
    'shift_exp.max_abs': SHIFT_EXP_MAX_ABS,
    'requantize.max_lsb': REQUANT_MAX_LSB,
    'isqrt.max_diff': float(ISQRT_MAX_DIFF),
    'i_layernorm.max_abs': LAYERNORM_MAX_ABS,
    'i_layernorm.std_rel': LAYERNORM_STD_REL,
}

E2E_TOLERANCES = {
    'logits.cosine': E2E_COSINE,
    'logits.argmax_agreement': E2E_ARGMAX_AGREEMENT,
}
