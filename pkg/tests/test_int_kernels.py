import numpy as np
import pytest

from src.models.quant_models import DyadicScale
from src.models.tensor_models import QTensor
from src.models.vit_models import DenseWeights
from src.services.error_handler import ShapeMismatchError, KernelPreconditionError, InvalidArgumentError
from src.services.int_kernels import im2col, int_matmul, int_dense, residual_add
from src.services.quantizer import dyadic_for
from src.services.saturation_tracker import saturation_tracker


def _dense(out_scale=None, out_requant=None, out_bits=32) -> DenseWeights:
    weight = QTensor(data=[[2, 3], [1, 1]], scale=0.25, bits=8)
    bias = QTensor(data=[4, 0], scale=0.125, bits=32)
    return DenseWeights(site="unit.dense", weight=weight, bias=bias, in_scale=0.5,
                        acc_scale=0.125, out_scale=out_scale, out_bits=out_bits,
                        out_requant=out_requant)


class TestIm2col:

    def test_patch_order(self):
        image = np.arange(2 * 4 * 4).reshape(2, 4, 4)
        patches = im2col(image, 2)
        assert patches.shape == (4, 8)
        assert patches[0].tolist() == [0, 1, 4, 5, 16, 17, 20, 21]
        assert patches[1].tolist() == [2, 3, 6, 7, 18, 19, 22, 23]

    def test_indivisible_image(self):
        with pytest.raises(ShapeMismatchError):
            im2col(np.zeros((3, 6, 6)), 4)

    def test_rank_check(self):
        with pytest.raises(ShapeMismatchError):
            im2col(np.zeros((6, 6)), 2)


class TestIntMatmul:

    def test_exact_product(self):
        q = QTensor(data=[[1, 2]], scale=0.5, bits=8)
        k = QTensor(data=[[3, 4], [-1, 0]], scale=0.5, bits=8)
        out = int_matmul(q, k, 0.25, 8)
        assert out.data.tolist() == [[11, -1]]
        assert out.scale == 0.25

    def test_batched_heads(self):
        q = QTensor(data=np.ones((2, 3, 4), dtype=np.int64), scale=1.0, bits=8)
        out = int_matmul(q, q, 1.0, 8, requant=DyadicScale(b=1, c=0))
        assert out.dims == (2, 3, 3)
        assert np.all(out.data == 4)

    def test_saturation(self):
        q = QTensor(data=[[127] * 4], scale=1.0, bits=8)
        out = int_matmul(q, q, 1.0, 8, site="unit.matmul")
        assert out.data.tolist() == [[127]]
        assert saturation_tracker.snapshot()["unit.matmul"] == {'clamped': 1, 'total': 1}

    def test_random_matches_real_product(self, rng):
        q_data = rng.integers(-127, 127, 16).reshape(4, 4)
        k_data = rng.integers(-127, 127, 16).reshape(4, 4)
        real = (0.05 * q_data) @ (0.04 * k_data).T
        s_out = float(np.max(np.abs(real))) / 127
        out = int_matmul(QTensor(data=q_data, scale=0.05, bits=8),
                         QTensor(data=k_data, scale=0.04, bits=8), s_out, 8)
        assert np.max(np.abs(out.data * s_out - real)) <= s_out * (0.5 + 1e-6)

    def test_inner_dimension(self):
        with pytest.raises(ShapeMismatchError):
            int_matmul(QTensor(data=[[1, 2]], scale=1.0, bits=8),
                       QTensor(data=[[1, 2, 3]], scale=1.0, bits=8), 1.0, 8)

    def test_wide_inputs_rejected(self):
        with pytest.raises(KernelPreconditionError):
            int_matmul(QTensor(data=[[1]], scale=1.0, bits=16),
                       QTensor(data=[[1]], scale=1.0, bits=8), 1.0, 8)


class TestIntDense:

    def test_accumulator_output(self):
        out = int_dense(QTensor(data=[[1, -1]], scale=0.5, bits=8), _dense())
        assert out.data.tolist() == [[3, 0]]
        assert out.bits == 32
        assert out.scale == 0.125

    def test_requantized_output(self):
        w = _dense(out_scale=0.25, out_requant=DyadicScale(b=1, c=1), out_bits=8)
        out = int_dense(QTensor(data=[[1, -1]], scale=0.5, bits=8), w)
        assert out.data.tolist() == [[2, 0]]
        assert out.scale == 0.25

    def test_zero_input_gives_bias(self):
        out = int_dense(QTensor(data=np.zeros((3, 2), dtype=np.int64), scale=0.5, bits=8), _dense())
        assert out.data.tolist() == [[4, 0]] * 3

    def test_random_matches_real_affine(self, rng):
        in_scale, w_scale = 0.05, 0.02
        acc_scale = in_scale * w_scale
        weight = QTensor(data=rng.integers(-127, 127, 64).reshape(8, 8), scale=w_scale, bits=8)
        bias = QTensor(data=rng.integers(-1000, 1000, 8), scale=acc_scale, bits=32)
        x = rng.integers(-127, 127, 64).reshape(8, 8)
        real = (in_scale * x) @ (w_scale * weight.data).T + acc_scale * bias.data
        s_out = float(np.max(np.abs(real))) / 127
        w = DenseWeights(site="unit.dense", weight=weight, bias=bias, in_scale=in_scale,
                         acc_scale=acc_scale, out_scale=s_out, out_bits=8,
                         out_requant=dyadic_for(acc_scale / s_out))
        out = int_dense(QTensor(data=x, scale=in_scale, bits=8), w)
        assert np.max(np.abs(out.data * s_out - real)) <= s_out * (0.5 + 1e-6)

    def test_input_scale_must_match(self):
        with pytest.raises(InvalidArgumentError):
            int_dense(QTensor(data=[[1, -1]], scale=0.25, bits=8), _dense())

    def test_input_width_must_match(self):
        with pytest.raises(ShapeMismatchError):
            int_dense(QTensor(data=[[1, -1, 0]], scale=0.5, bits=8), _dense())

    def test_bias_scale_checked(self):
        with pytest.raises(InvalidArgumentError):
            DenseWeights(site="bad", weight=QTensor(data=[[1]], scale=0.25, bits=8),
                         bias=QTensor(data=[0], scale=1.0, bits=32), in_scale=0.5,
                         acc_scale=0.125)

    def test_acc_scale_checked(self):
        with pytest.raises(InvalidArgumentError):
            DenseWeights(site="bad", weight=QTensor(data=[[1]], scale=0.25, bits=8),
                         bias=QTensor(data=[0], scale=0.25, bits=32), in_scale=0.5,
                         acc_scale=0.25)


class TestResidualAdd:

    def test_aligns_scales(self):
        a = QTensor(data=[10, -10], scale=0.5, bits=8)
        b = QTensor(data=[4, 4], scale=0.25, bits=8)
        out = residual_add(a, b, 0.5, 8)
        assert out.data.tolist() == [12, -8]
        assert out.scale == 0.5

    def test_random_pair_close_to_real_sum(self, rng):
        a = QTensor(data=rng.integers(-127, 127, 256), scale=0.03, bits=8)
        b = QTensor(data=rng.integers(-127, 127, 256), scale=0.05, bits=8)
        out = residual_add(a, b, 0.1, 8)
        real = 0.03 * a.data + 0.05 * b.data
        assert np.max(np.abs(out.data * 0.1 - real)) <= 1.5 * 0.1

    def test_saturates(self):
        a = QTensor(data=[100], scale=1.0, bits=8)
        out = residual_add(a, a, 1.0, 8, site="unit.residual")
        assert out.data.tolist() == [127]
        assert saturation_tracker.clamped("unit.residual") == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            residual_add(QTensor(data=[1], scale=1.0, bits=8),
                         QTensor(data=[1, 2], scale=1.0, bits=8), 1.0, 8)
