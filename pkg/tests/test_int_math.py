import math

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from src.config.tolerances import SHIFT_EXP_MAX_ABS
from src.models.quant_models import IntMathConfig
from src.services.error_handler import (
    DomainError, InvalidArgumentError, KernelPreconditionError, IntegerOnlyViolation,
)
from src.services.int_math import (
    arith_rshift, round_div, bit_length, exp_unit, shift_exp_int, shift_exp, int_div, int_isqrt,
)
from src.services.integer_audit import integer_only
from src.services.saturation_tracker import saturation_tracker
from src.services.scalar_reference import shift_exp_scalar, int_div_scalar, isqrt_scalar


class TestShiftHelpers:

    @pytest.mark.parametrize("x, s, expected", [(5, 1, 2), (-5, 1, -3), (-1, 62, -1), (7, 0, 7)])
    def test_arith_rshift_scalar(self, x, s, expected):
        assert arith_rshift(x, s) == expected

    def test_arith_rshift_array(self):
        np.testing.assert_array_equal(arith_rshift(np.array([-8, -7, 7, 8]), 2), [-2, -2, 1, 2])

    def test_arith_rshift_bounds(self):
        with pytest.raises(InvalidArgumentError):
            arith_rshift(1, 63)

    def test_round_div_half_away(self):
        np.testing.assert_array_equal(round_div([5, -5, 4, -4, 3], [2, 2, 3, 3, 6]), [3, -3, 1, -1, 1])

    def test_bit_length_examples(self):
        np.testing.assert_array_equal(bit_length([0, 1, 2, 3, 255, 256, 1 << 40]),
                                      [0, 1, 2, 2, 8, 9, 41])

    @given(st.integers(min_value=0, max_value=(1 << 62) - 1))
    def test_bit_length_matches_python(self, value):
        assert int(bit_length(np.array([value]))[0]) == value.bit_length()


class TestShiftExp:

    def test_zero_is_one(self, int_math):
        result = shift_exp(np.array([0]), 1.0 / 16.0, int_math)
        assert int(result.I_exp[0]) == 16 << 15
        assert result.S_exp * int(result.I_exp[0]) == 1.0

    def test_minus_one(self, int_math):
        result = shift_exp(np.array([-16]), 1.0 / 16.0, int_math)
        assert result.S_exp * int(result.I_exp[0]) == pytest.approx(math.exp(-1.0), abs=0.01)

    def test_deep_negative_underflows(self, int_math):
        assert int(shift_exp(np.array([-256]), 1.0 / 16.0, int_math).I_exp[0]) == 0

    def test_positive_input_rejected(self, int_math):
        with pytest.raises(DomainError):
            shift_exp(np.array([-1, 1]), 1.0 / 16.0, int_math)

    def test_scale_too_coarse(self):
        with pytest.raises(DomainError):
            exp_unit(3.0)

    def test_precomputed_unit_is_integer_only(self, int_math):
        with integer_only():
            result = shift_exp(np.array([0, -8]), 1.0 / 16.0, int_math, i0=16)
        assert int(result.I_exp[0]) == 16 << 15

    def test_unit_requires_real_arithmetic(self):
        with integer_only():
            with pytest.raises(IntegerOnlyViolation):
                exp_unit(1.0 / 16.0)

    @given(st.integers(min_value=1, max_value=128), st.integers(min_value=8, max_value=20),
           st.integers(min_value=-(1 << 20), max_value=0), st.integers(min_value=0, max_value=1000))
    def test_monotone_and_bounded(self, i0, N, low, gap):
        high = min(low + gap, 0)
        lo_exp, hi_exp = shift_exp_int(np.array([low, high]), i0, N)
        assert 0 <= lo_exp <= hi_exp <= i0 << N

    @given(st.lists(st.integers(min_value=-(1 << 18), max_value=0), min_size=1, max_size=32),
           st.integers(min_value=1, max_value=64))
    def test_matches_scalar(self, values, i0):
        vector = shift_exp_int(np.array(values), i0, 15)
        assert [int(v) for v in vector] == [shift_exp_scalar(v, i0, 15) for v in values]

    def test_coarse_scale_trace(self, int_math):
        # I_p = -2, r = 2, I_b = 8 - 1
        result = shift_exp(np.array([-2]), 1.0 / 8.0, int_math)
        assert result.S_exp * int(result.I_exp[0]) == 0.875

    @pytest.mark.parametrize("scale", [1 / 8, 1 / 16, 1 / 64, 1 / 128])
    def test_approximation_error_on_grid(self, int_math, scale):
        grid = np.arange(-(1 << 12), 1)
        result = shift_exp(grid, scale, int_math)
        approx = result.S_exp * result.I_exp.astype(np.float64)
        assert np.max(np.abs(approx - np.exp(grid * scale))) <= SHIFT_EXP_MAX_ABS


class TestIntDiv:

    def test_example(self, int_math):
        out, scale = int_div(np.array([5]), np.array([7]), 8, int_math)
        assert out.tolist() == [91]
        assert scale == 1.0 / 128.0

    def test_stored_scale_under_audit(self, int_math):
        with integer_only():
            out, scale = int_div(np.array([5]), np.array([7]), 8, int_math, out_scale=1.0 / 128.0)
            with pytest.raises(IntegerOnlyViolation):
                int_div(np.array([5]), np.array([7]), 8, int_math)
        assert (out.tolist(), scale) == ([91], 1.0 / 128.0)

    def test_equal_operands(self, int_math):
        assert int_div(np.array([7]), np.array([7]), 8, int_math)[0].tolist() == [127]

    def test_unit_ratio_saturates(self, int_math):
        assert int_div(np.array([1]), np.array([1]), 8, int_math)[0].tolist() == [127]
        assert saturation_tracker.clamped("int_div") == 1

    def test_zero_divisor(self, int_math):
        with pytest.raises(DomainError):
            int_div(np.array([0]), np.array([0]), 8, int_math)

    def test_ratio_above_one(self, int_math):
        with pytest.raises(InvalidArgumentError):
            int_div(np.array([8]), np.array([7]), 8, int_math)

    def test_divisor_too_large(self, int_math):
        with pytest.raises(KernelPreconditionError):
            int_div(np.array([1]), np.array([1 << 31]), 8, int_math)

    def test_headroom(self):
        with pytest.raises(KernelPreconditionError):
            int_div(np.array([1]), np.array([1 << 30]), 8, IntMathConfig(M=40))

    def test_output_bits(self, int_math):
        with pytest.raises(InvalidArgumentError):
            int_div(np.array([1]), np.array([2]), 17, int_math)

    @given(st.integers(min_value=1, max_value=(1 << 31) - 1), st.floats(min_value=0.0, max_value=1.0),
           st.integers(min_value=2, max_value=16))
    def test_bound_and_scalar(self, divisor, fraction, k_out):
        dividend = int(divisor * fraction)
        cfg = IntMathConfig()
        out, scale = int_div(np.array([dividend]), np.array([divisor]), k_out, cfg)
        value = int(out[0])
        assert value == int_div_scalar(dividend, divisor, k_out, cfg.M)
        bound = scale * (1 + divisor / 2.0 ** (cfg.M - k_out + 1))
        assert abs(value * scale - dividend / divisor) <= bound + 1e-12


class TestIsqrt:

    @pytest.mark.parametrize("value, expected", [(0, 0), (1, 1), (2, 1), (15, 4), (16, 4), (17, 4)])
    def test_examples(self, int_math, value, expected):
        assert int(int_isqrt(np.array([value]), int_math)[0]) == expected

    def test_negative_rejected(self, int_math):
        with pytest.raises(InvalidArgumentError):
            int_isqrt(np.array([-1]), int_math)

    def test_too_large_rejected(self, int_math):
        with pytest.raises(InvalidArgumentError):
            int_isqrt(np.array([1 << 62]), int_math)

    def test_exhaustive_small(self, int_math):
        values = np.arange(0, (1 << 16) + 1)
        roots = int_isqrt(values, int_math)
        exact = np.array([math.isqrt(int(v)) for v in values])
        assert np.max(np.abs(roots - exact)) <= 1

    @given(st.integers(min_value=0, max_value=(1 << 62) - 1))
    def test_matches_scalar(self, value):
        assert int(int_isqrt(np.array([value]), IntMathConfig())[0]) == isqrt_scalar(value, 10)

    @pytest.mark.slow
    def test_exhaustive_and_random(self, int_math, rng):
        values = np.concatenate([np.arange(0, (1 << 20) + 1),
                                 rng.integers(0, (1 << 62) - 1, 1_000_000)])
        roots = int_isqrt(values, int_math)
        exact = np.array([math.isqrt(int(v)) for v in values])
        assert np.max(np.abs(roots - exact)) <= 1

    @hyp_settings(max_examples=50)
    @given(st.integers(min_value=0, max_value=(1 << 40)))
    def test_close_to_floor_sqrt(self, value):
        root = int(int_isqrt(np.array([value]), IntMathConfig())[0])
        assert abs(root - math.isqrt(value)) <= 1
