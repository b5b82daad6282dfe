import numpy as np
import pytest

from src.models.tensor_models import FpTensor
from src.services.error_handler import ShapeMismatchError, InvalidArgumentError
from src.services.fp_oracle import (
    GeluForm, fp_softmax, fp_gelu_erf, fp_gelu_sigmoid, fp_layernorm, fp_forward,
)
from src.services.model_builder import gen_inputs


class TestElementwise:

    def test_gelu_forms_at_one(self):
        assert fp_gelu_sigmoid([1.0]).data[0] == pytest.approx(0.8459, abs=2e-4)
        assert fp_gelu_erf([1.0]).data[0] == pytest.approx(0.8413, abs=1e-4)

    def test_gelu_at_zero(self):
        assert fp_gelu_erf([0.0]).data[0] == 0.0
        assert fp_gelu_sigmoid([0.0]).data[0] == 0.0

    def test_softmax_rows(self):
        probs = fp_softmax([[0.0, -1.0], [3.0, 3.0]]).data
        np.testing.assert_allclose(probs.sum(axis=-1), [1.0, 1.0])
        assert probs[0, 0] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)))
        np.testing.assert_array_equal(probs[1], [0.5, 0.5])

    def test_softmax_shift_invariant(self):
        np.testing.assert_allclose(fp_softmax([[1.0, 2.0, 3.0]]).data,
                                   fp_softmax([[101.0, 102.0, 103.0]]).data)

    def test_layernorm(self):
        out = fp_layernorm([[1.0, 3.0]], [1.0, 2.0], [0.0, 0.5]).data
        np.testing.assert_allclose(out, [[-1.0, 2.5]])

    def test_layernorm_constant_row_gives_beta(self):
        out = fp_layernorm([[2.0, 2.0, 2.0]], [1.0, 1.0, 1.0], [0.1, 0.2, 0.3]).data
        np.testing.assert_allclose(out, [[0.1, 0.2, 0.3]])

    def test_layernorm_parameter_shape(self):
        with pytest.raises(ShapeMismatchError):
            fp_layernorm([[1.0, 2.0]], [1.0], [0.0])


class TestForward:

    def test_logits_shape_and_determinism(self, tiny_weights):
        image = gen_inputs(tiny_weights.config, 1, seed=3)[0]
        first = fp_forward(tiny_weights, image)
        assert first.dims == (tiny_weights.config.num_classes,)
        assert first == fp_forward(tiny_weights, image)

    def test_observer_sees_every_site(self, tiny_weights):
        seen = []
        image = gen_inputs(tiny_weights.config, 1, seed=3)[0]
        fp_forward(tiny_weights, image, observer=lambda site, values: seen.append(site))
        for site in ("input", "patch_embed.out", "embed.out", "blocks.0.attn.scores",
                     "blocks.0.mlp.gelu", "blocks.0.res2.out", "norm.out"):
            assert site in seen

    def test_gelu_form_changes_logits(self, tiny_weights):
        image = gen_inputs(tiny_weights.config, 1, seed=3)[0]
        erf = fp_forward(tiny_weights, image, GeluForm.ERF).data
        sigmoid = fp_forward(tiny_weights, image, GeluForm.SIGMOID).data
        assert not np.array_equal(erf, sigmoid)

    def test_wrong_image_shape(self, tiny_weights):
        with pytest.raises(ShapeMismatchError):
            fp_forward(tiny_weights, FpTensor(data=np.zeros((3, 4, 4))))

    def test_requires_fp_input(self, tiny_weights):
        with pytest.raises(InvalidArgumentError):
            fp_forward(tiny_weights, np.zeros((3, 8, 8)))
