import pytest

from src.models.quant_models import IntMathConfig, KernelConfig
from src.models.vit_models import ModelConfig
from src.services.error_handler import error_handler
from src.services.model_builder import gen_fp_weights, gen_inputs, collect_calibration, build_qmodel
from src.services.rng import Rng
from src.services.saturation_tracker import saturation_tracker


@pytest.fixture(autouse=True)
def _reset_global_state():
    """全局饱和统计和错误统计在每个用例之间清空"""
    saturation_tracker.reset()
    error_handler.clear_errors()
    yield


@pytest.fixture
def rng():
    return Rng(42)


@pytest.fixture
def int_math():
    return IntMathConfig()


@pytest.fixture
def kernel_config():
    return KernelConfig()


@pytest.fixture
def desk_config():
    """验收用的 desk 规模模型(depth 2, d_model 64, heads 4, patch 4, 16x16, 100 类)"""
    return ModelConfig()


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(image_size=8, patch_size=4, channels=3, d_model=16, heads=2,
                       mlp_ratio=2, depth=1, num_classes=10)


@pytest.fixture(scope="session")
def tiny_weights(tiny_config):
    return gen_fp_weights(tiny_config, seed=0)


@pytest.fixture(scope="session")
def tiny_calibration(tiny_weights):
    return collect_calibration(tiny_weights, gen_inputs(tiny_weights.config, 8, seed=1), seed=1)


@pytest.fixture(scope="session")
def tiny_model(tiny_weights, tiny_calibration):
    return build_qmodel(tiny_weights, tiny_calibration, KernelConfig())


@pytest.fixture
def model_dir(tmp_path):
    return tmp_path / "model"
