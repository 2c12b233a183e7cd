"""
Checkpoint files for the matching network.

Layout, all integers little-endian uint32:

    magic        4 bytes, b"GMTC"
    version      uint32, currently 1
    header_len   uint32, byte length of the header
    header       JSON object (UTF-8):
                   {"parameters": [{"name": str, "shape": [int, ...]}, ...],
                    "activation": str,
                    "gcn": {"use_geometry": bool, "num_layers": int, "aggregation": str}}
    tensors      one per header entry, in header order:
                   ndim uint32, ndim x uint32 dims, prod(dims) x float32 little-endian

Shapes are stored twice (header and tensor prefix) and must agree on load.
"""

from dataclasses import asdict
from pathlib import Path
from typing import Union

import numpy as np
import orjson

from .matching_net import MatchingNetwork, MlpParams
from ..config.settings import GcnConfig
from ..models.errors import DataIoError
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

MAGIC = b"GMTC"
VERSION = 1
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def encode_checkpoint(network: MatchingNetwork) -> bytes:
    params = network.parameters()
    header = {
        "parameters": [{"name": name, "shape": list(value.shape)} for name, value in params.items()],
        "activation": network.encoder.activation,
        "gcn": asdict(network.gcn_config),
    }
    header_bytes = orjson.dumps(header)
    chunks = [MAGIC, np.array([VERSION, len(header_bytes)], dtype=_U32).tobytes(), header_bytes]
    for value in params.values():
        chunks.append(np.array([value.ndim, *value.shape], dtype=_U32).tobytes())
        chunks.append(np.ascontiguousarray(value, dtype=_F32).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise DataIoError(f"checkpoint truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self, count: int = 1) -> np.ndarray:
        return np.frombuffer(self.take(count * _U32.itemsize), dtype=_U32)


def decode_checkpoint(data: bytes) -> MatchingNetwork:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataIoError("not a checkpoint file (bad magic)")
    version, header_len = (int(v) for v in reader.u32(2))
    if version != VERSION:
        raise DataIoError(f"unsupported checkpoint version {version}")
    try:
        header = orjson.loads(reader.take(header_len))
        entries = header["parameters"]
        activation = header["activation"]
        gcn_config = GcnConfig(**header["gcn"])
    except (orjson.JSONDecodeError, KeyError, TypeError) as e:
        raise DataIoError(f"invalid checkpoint header: {e}")

    tensors = {}
    for entry in entries:
        ndim = int(reader.u32()[0])
        shape = tuple(int(d) for d in reader.u32(ndim))
        if list(shape) != list(entry["shape"]):
            raise DataIoError(f"tensor {entry['name']} has shape {shape}, header says {entry['shape']}")
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(reader.take(count * _F32.itemsize), dtype=_F32)
        tensors[entry["name"]] = raw.reshape(shape).astype(float)
    if reader.offset != len(data):
        raise DataIoError(f"{len(data) - reader.offset} trailing bytes after last tensor")

    try:
        encoder = MlpParams(*(tensors[f"encoder.{k}"] for k in ("W1", "b1", "W2", "b2")), activation)
        gcn = MlpParams(*(tensors[f"gcn.{k}"] for k in ("W1", "b1", "W2", "b2")), activation)
    except KeyError as e:
        raise DataIoError(f"checkpoint is missing parameter {e}")
    return MatchingNetwork(encoder, gcn, gcn_config)


def save_checkpoint(network: MatchingNetwork, path: Union[str, Path]) -> None:
    """Write the network parameters; values are stored as float32."""
    path = Path(path)
    try:
        path.write_bytes(encode_checkpoint(network))
    except OSError as e:
        raise DataIoError(f"cannot write checkpoint {path}: {e}")
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: Union[str, Path]) -> MatchingNetwork:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataIoError(f"cannot read checkpoint {path}: {e}")
    network = decode_checkpoint(data)
    logger.info(f"Loaded checkpoint {path} ({network.encoder.d_in} -> {network.encoder.d_out})")
    return network
