import numpy as np
import pytest

from src.models.quant_models import DyadicScale, KernelConfig
from src.models.vit_models import AttentionScales, CalibrationMethod, CalibrationStats, ModelConfig, SiteRange
from src.services.error_handler import ModelBuildError, InvalidArgumentError
from src.services.model_builder import (
    required_sites, gen_fp_weights, gen_inputs, collect_calibration, build_qmodel,
    verify_scale_graph, scale_summary, dyadic_entries,
)
from src.services.quantizer import calibrate_minmax, quantize


class TestModelConfig:

    def test_heads_must_divide_width(self):
        with pytest.raises(InvalidArgumentError):
            ModelConfig(d_model=30, heads=4)

    def test_patch_must_divide_image(self):
        with pytest.raises(InvalidArgumentError):
            ModelConfig(image_size=10, patch_size=4)

    def test_derived_sizes(self, desk_config):
        assert desk_config.num_patches == 16
        assert desk_config.num_tokens == 17
        assert desk_config.patch_dim == 48
        assert desk_config.head_dim == 16


class TestWeights:

    def test_deterministic(self, tiny_config):
        first, second = gen_fp_weights(tiny_config, seed=5), gen_fp_weights(tiny_config, seed=5)
        assert first.tensors.keys() == second.tensors.keys()
        for name, tensor in first.tensors.items():
            assert tensor == second.tensors[name]

    def test_seed_changes_weights(self, tiny_config):
        assert gen_fp_weights(tiny_config, seed=1).get("head.weight") != \
            gen_fp_weights(tiny_config, seed=2).get("head.weight")

    def test_layernorm_identity_init(self, tiny_weights):
        np.testing.assert_array_equal(tiny_weights.get("blocks.0.ln1.gamma").data, 1.0)
        np.testing.assert_array_equal(tiny_weights.get("norm.beta").data, 0.0)

    def test_missing_tensor(self, tiny_weights):
        with pytest.raises(InvalidArgumentError):
            tiny_weights.get("blocks.7.attn.q.weight")

    def test_doubled_weights_double_the_scale(self, tiny_weights):
        weight = tiny_weights.get("head.weight")
        doubled = weight.model_copy(update={'data': weight.data * 2.0})
        base, scaled = quantize(weight, calibrate_minmax(weight, 8)), quantize(doubled, calibrate_minmax(doubled, 8))
        assert scaled.scale == 2.0 * base.scale
        np.testing.assert_array_equal(scaled.data, base.data)


class TestCalibration:

    def test_covers_required_sites(self, tiny_config, tiny_calibration):
        assert set(required_sites(tiny_config)) <= set(tiny_calibration.sites)
        assert tiny_calibration.num_inputs == 8

    def test_zero_site_uses_unit_clip(self):
        stats = CalibrationStats(sites={"x": SiteRange(absmax=0.0)})
        assert stats.clip_value("x") == 1.0

    def test_percentile_not_above_absmax(self, tiny_weights):
        stats = collect_calibration(tiny_weights, gen_inputs(tiny_weights.config, 2, seed=4),
                                    method=CalibrationMethod.PERCENTILE, percentile=99.0)
        for record in stats.sites.values():
            assert record.percentile_value <= record.absmax

    def test_invalid_percentile(self, tiny_weights):
        with pytest.raises(InvalidArgumentError):
            collect_calibration(tiny_weights, [], method=CalibrationMethod.PERCENTILE, percentile=0.0)


class TestBuild:

    def test_scale_graph(self, tiny_model):
        assert verify_scale_graph(tiny_model) == sum(1 for _ in dyadic_entries(tiny_model))
        assert tiny_model.head.out_requant is None

    def test_build_is_deterministic(self, tiny_weights, tiny_calibration, tiny_model):
        assert build_qmodel(tiny_weights, tiny_calibration, KernelConfig()) == tiny_model

    def test_missing_site(self, tiny_weights, tiny_calibration):
        sites = {key: value for key, value in tiny_calibration.sites.items() if key != "norm.out"}
        with pytest.raises(ModelBuildError):
            build_qmodel(tiny_weights, tiny_calibration.model_copy(update={'sites': sites}))

    def test_tampered_dyadic_detected(self, tiny_model):
        norm = tiny_model.norm
        broken = norm.model_copy(update={'out_requant': DyadicScale(b=norm.out_requant.b + 1,
                                                                    c=norm.out_requant.c)})
        with pytest.raises(ModelBuildError):
            verify_scale_graph(tiny_model.model_copy(update={'norm': broken}))

    def test_exp_sum_overflow_rejected(self, tiny_weights, tiny_calibration):
        sites = dict(tiny_calibration.sites)
        sites["blocks.0.attn.scores"] = SiteRange(absmax=1e-3)
        with pytest.raises(ModelBuildError):
            build_qmodel(tiny_weights, tiny_calibration.model_copy(update={'sites': sites}))

    def test_embeddings_share_scales(self, tiny_model):
        assert tiny_model.cls_token.scale == tiny_model.patch_embed.out_scale
        assert tiny_model.pos_embed.scale == tiny_model.embed_residual.rhs_scale

    def test_forward_scales_are_stored(self, tiny_model):
        block = tiny_model.blocks[0]
        for dense in (tiny_model.patch_embed, block.q, block.o, block.fc2, tiny_model.head):
            assert dense.acc_scale == dense.in_scale * dense.weight.scale
        assert block.attention.probs_scale == 1.0 / (1 << (block.attention.probs_bits - 1))
        with pytest.raises(InvalidArgumentError):
            AttentionScales.model_validate({**block.attention.model_dump(), 'probs_scale': 0.5})

    def test_scale_summary(self, tiny_config, tiny_model):
        rows = scale_summary(tiny_model)
        assert [row[0] for row in rows] == required_sites(tiny_config)
        for _, m, scale, bits in rows:
            assert m == pytest.approx(scale * ((1 << bits) - 1) / 2.0)
