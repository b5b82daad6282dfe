"""
模型存储

目录布局:
    manifest.json        量化模型清单(配置、每个张量的角色/尺度/位宽、全部二进分数)
    fp_manifest.json     浮点权重清单
    calibration.json     校准统计
    blobs/<sha256>.itns  按内容哈希命名的 ITNS 张量
"""

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel

from ..models.tensor_models import FpTensor, QTensor
from ..models.vit_models import QViTModel, FpViTWeights, CalibrationStats
from .error_handler import InvalidArgumentError, TensorCorruptionError, TensorFormatError
from .model_builder import verify_scale_graph
from .tensor_io import tensor_to_bytes, tensor_from_bytes
from ..utils.logger import get_logger

logger = get_logger("model_storage")

MANIFEST_NAME = "manifest.json"
FP_MANIFEST_NAME = "fp_manifest.json"
CALIBRATION_NAME = "calibration.json"
BLOB_DIR = "blobs"
TENSOR_KEY = "__tensor__"
MANIFEST_VERSION = 1


def dump_json(data: Any) -> str:
    """稳定的 JSON 文本(字段顺序固定，结尾换行)"""
    return json.dumps(data, ensure_ascii=False, indent=2) + "\n"


class ModelStorage:
    """模型目录读写服务"""

    def __init__(self, model_dir: Union[str, Path]):
        self.model_dir = Path(model_dir)
        self.blob_dir = self.model_dir / BLOB_DIR

    def _ensure_dirs(self):
        """确保模型目录存在"""
        self.blob_dir.mkdir(parents=True, exist_ok=True)

    def _require(self, name: str) -> Path:
        path = self.model_dir / name
        if not path.exists():
            raise InvalidArgumentError(f"模型目录缺少文件: {path}")
        return path

    def save_blob(self, tensor: Union[FpTensor, QTensor]) -> str:
        """
        保存张量为内容寻址的 blob

        Returns:
            sha256 十六进制摘要
        """
        self._ensure_dirs()
        blob = tensor_to_bytes(tensor)
        digest = hashlib.sha256(blob).hexdigest()
        path = self.blob_dir / f"{digest}.itns"
        if not path.exists():
            with open(path, 'wb') as f:
                f.write(blob)
        return digest

    def load_blob(self, digest: str) -> Union[FpTensor, QTensor]:
        """读取 blob 并校验内容哈希"""
        path = self.blob_dir / f"{digest}.itns"
        if not path.exists():
            raise InvalidArgumentError(f"缺少张量 blob: {path}")
        with open(path, 'rb') as f:
            blob = f.read()
        if hashlib.sha256(blob).hexdigest() != digest:
            raise TensorCorruptionError(f"张量 blob 哈希不符: {path}")
        return tensor_from_bytes(blob)

    # ---- 模型对象 <-> 清单字典 ----

    def _to_manifest(self, value: Any) -> Any:
        if isinstance(value, (QTensor, FpTensor)):
            entry = {TENSOR_KEY: self.save_blob(value), 'dims': list(value.dims)}
            if isinstance(value, QTensor):
                entry.update({'scale': value.scale, 'bits': value.bits})
            return entry
        if isinstance(value, BaseModel):
            return {name: self._to_manifest(getattr(value, name)) for name in type(value).model_fields}
        if isinstance(value, dict):
            return {key: self._to_manifest(item) for key, item in value.items()}
        if isinstance(value, (list, tuple)):
            return [self._to_manifest(item) for item in value]
        if isinstance(value, Enum):
            return value.value
        return value

    def _from_manifest(self, value: Any) -> Any:
        if isinstance(value, dict):
            if TENSOR_KEY in value:
                tensor = self.load_blob(value[TENSOR_KEY])
                if list(tensor.dims) != value.get('dims'):
                    raise TensorCorruptionError(f"张量维度与清单不符: {value[TENSOR_KEY]}")
                return tensor
            return {key: self._from_manifest(item) for key, item in value.items()}
        if isinstance(value, list):
            return [self._from_manifest(item) for item in value]
        return value

    def _read_manifest(self, name: str) -> Dict[str, Any]:
        path = self._require(name)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise TensorFormatError(f"清单不是合法 JSON: {path}: {e}") from e
        if manifest.get('version') != MANIFEST_VERSION:
            raise TensorFormatError(f"不支持的清单版本: {manifest.get('version')}")
        return manifest

    def _write_manifest(self, name: str, body: Dict[str, Any]):
        self._ensure_dirs()
        with open(self.model_dir / name, 'w', encoding='utf-8') as f:
            f.write(dump_json({'version': MANIFEST_VERSION, **body}))

    # ---- 公共接口 ----

    def save_qmodel(self, model: QViTModel) -> Path:
        """写出量化模型清单和张量 blob"""
        self._write_manifest(MANIFEST_NAME, {'model': self._to_manifest(model)})
        logger.info(f"量化模型已保存: {self.model_dir / MANIFEST_NAME}")
        return self.model_dir / MANIFEST_NAME

    def load_qmodel(self, verify: bool = True) -> QViTModel:
        """读取量化模型；默认重新校验尺度图"""
        manifest = self._read_manifest(MANIFEST_NAME)
        model = QViTModel.model_validate(self._from_manifest(manifest['model']))
        if verify:
            verify_scale_graph(model)
        logger.info(f"量化模型已加载: {self.model_dir}")
        return model

    def save_fp_weights(self, weights: FpViTWeights) -> Path:
        self._write_manifest(FP_MANIFEST_NAME, {'weights': self._to_manifest(weights)})
        logger.info(f"浮点权重已保存: {self.model_dir / FP_MANIFEST_NAME}")
        return self.model_dir / FP_MANIFEST_NAME

    def load_fp_weights(self) -> FpViTWeights:
        manifest = self._read_manifest(FP_MANIFEST_NAME)
        return FpViTWeights.model_validate(self._from_manifest(manifest['weights']))

    def save_calibration(self, stats: CalibrationStats, path: Optional[Path] = None) -> Path:
        path = Path(path) if path else self.model_dir / CALIBRATION_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(dump_json(stats.model_dump(mode='json')))
        logger.info(f"校准统计已保存: {path}")
        return path

    def load_calibration(self, path: Optional[Path] = None) -> CalibrationStats:
        path = Path(path) if path else self._require(CALIBRATION_NAME)
        if not path.exists():
            raise InvalidArgumentError(f"校准文件不存在: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            return CalibrationStats.model_validate(json.load(f))

    def has_qmodel(self) -> bool:
        return (self.model_dir / MANIFEST_NAME).exists()

    def has_fp_weights(self) -> bool:
        return (self.model_dir / FP_MANIFEST_NAME).exists()
