import struct

import numpy as np
import pytest

from src.models.tensor_models import FpTensor, QTensor
from src.services.error_handler import InvalidArgumentError, TensorCorruptionError, TensorFormatError
from src.services.tensor_io import read_tensor, write_tensor, tensor_to_bytes, tensor_from_bytes


class TestTensorModels:

    def test_qtensor_range_checked(self):
        with pytest.raises(InvalidArgumentError):
            QTensor(data=[128], scale=1.0, bits=8)
        assert QTensor(data=[-128, 127], scale=1.0, bits=8).dims == (2,)

    def test_qtensor_scale_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            QTensor(data=[1], scale=0.0, bits=8)
        with pytest.raises(InvalidArgumentError):
            QTensor(data=[1], scale=float('inf'), bits=8)

    def test_qtensor_rejects_float_data(self):
        with pytest.raises(InvalidArgumentError):
            QTensor(data=np.array([0.5]), scale=1.0, bits=8)

    def test_fptensor_rejects_nan(self):
        with pytest.raises(InvalidArgumentError):
            FpTensor(data=[0.0, float('nan')])

    def test_data_is_read_only(self):
        t = QTensor(data=[1, 2], scale=0.5, bits=8)
        with pytest.raises(ValueError):
            t.data[0] = 3


class TestItns:

    def test_qtensor_round_trip(self, tmp_path):
        t = QTensor(data=np.arange(-6, 6).reshape(3, 4), scale=2.0 / 255.0, bits=8)
        write_tensor(tmp_path / "q.itns", t)
        loaded = read_tensor(tmp_path / "q.itns")
        assert isinstance(loaded, QTensor)
        assert loaded == t

    def test_fptensor_round_trip(self, tmp_path):
        t = FpTensor(data=np.linspace(-1.0, 1.0, 10).reshape(2, 5))
        write_tensor(tmp_path / "f.itns", t)
        assert read_tensor(tmp_path / "f.itns") == t

    def test_encoding_is_deterministic(self):
        t = QTensor(data=[[1, -2], [3, -4]], scale=0.25, bits=16)
        assert tensor_to_bytes(t) == tensor_to_bytes(QTensor(data=[[1, -2], [3, -4]], scale=0.25, bits=16))

    def test_truncated_payload(self):
        blob = tensor_to_bytes(QTensor(data=[1, 2, 3], scale=1.0, bits=8))
        with pytest.raises(TensorCorruptionError):
            tensor_from_bytes(blob[:-1])

    def test_truncated_header(self):
        blob = tensor_to_bytes(FpTensor(data=[1.0]))
        with pytest.raises(TensorCorruptionError):
            tensor_from_bytes(blob[:6])

    def test_wrong_magic(self):
        blob = tensor_to_bytes(FpTensor(data=[1.0]))
        with pytest.raises(TensorFormatError):
            tensor_from_bytes(b"XTNS" + blob[4:])

    def test_unknown_version(self):
        blob = bytearray(tensor_to_bytes(FpTensor(data=[1.0])))
        struct.pack_into("<H", blob, 4, 9)
        with pytest.raises(TensorFormatError):
            tensor_from_bytes(bytes(blob))

    def test_payload_outside_declared_bits(self):
        blob = bytearray(tensor_to_bytes(QTensor(data=[1], scale=1.0, bits=8)))
        struct.pack_into("<q", blob, len(blob) - 8, 1000)
        with pytest.raises(TensorCorruptionError):
            tensor_from_bytes(bytes(blob))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            read_tensor(tmp_path / "missing.itns")
