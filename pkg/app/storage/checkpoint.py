"""Binary checkpoint codec.

Layout (all integers unsigned 32-bit little-endian)::

    b"SVSN" | version | config_len | config text (key=value lines, UTF-8)
    then per parameter until EOF:
    name_len | name | rank | dims... | float32 LE values
"""

from collections import OrderedDict
from pathlib import Path
from typing import BinaryIO, Union
import logging
import struct

import numpy as np

from app.models import NetworkConfig
from app.services.network_service import NetworkService, SVSNetwork
from app.services.tensor_service import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"SVSN"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


def _write_u32(stream: BinaryIO, value: int) -> None:
    stream.write(_U32.pack(value))


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise ValueError(f"truncated checkpoint while reading {what}")
    return data


def _read_u32(stream: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(stream, 4, what))[0]


def encode_config(cfg: NetworkConfig) -> bytes:
    lines = [f"{key}={value!r}" for key, value in cfg.model_dump().items()]
    return "\n".join(lines).encode("utf-8")


def decode_config(text: bytes) -> NetworkConfig:
    values = {}
    for line in text.decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed config line in checkpoint: {line!r}")
        values[key.strip()] = value.strip()
    return NetworkConfig(**values)


class CheckpointStore:
    """Save and load SVSNetwork parameters"""

    @staticmethod
    def dump(net: SVSNetwork, stream: BinaryIO) -> None:
        stream.write(MAGIC)
        _write_u32(stream, FORMAT_VERSION)
        config = encode_config(net.config)
        _write_u32(stream, len(config))
        stream.write(config)
        for name, tensor in net.params.items():
            encoded = name.encode("utf-8")
            _write_u32(stream, len(encoded))
            stream.write(encoded)
            _write_u32(stream, tensor.data.ndim)
            for dim in tensor.data.shape:
                _write_u32(stream, dim)
            stream.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())

    @staticmethod
    def load_stream(stream: BinaryIO) -> SVSNetwork:
        if _read_exact(stream, 4, "magic") != MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version = _read_u32(stream, "version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = decode_config(_read_exact(stream, _read_u32(stream, "config length"), "config"))

        params: "OrderedDict[str, Tensor]" = OrderedDict()
        while True:
            head = stream.read(4)
            if not head:
                break
            if len(head) != 4:
                raise ValueError("truncated checkpoint while reading parameter name length")
            name = _read_exact(stream, _U32.unpack(head)[0], "parameter name").decode("utf-8")
            rank = _read_u32(stream, f"rank of {name}")
            shape = tuple(_read_u32(stream, f"dims of {name}") for _ in range(rank))
            count = int(np.prod(shape, dtype=np.int64))
            raw = _read_exact(stream, 4 * count, f"values of {name}")
            data = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
            params[name] = Tensor(data, requires_grad=True, name=name)

        expected = NetworkService.parameter_shapes(config)
        actual = OrderedDict((name, tensor.shape) for name, tensor in params.items())
        if list(expected.items()) != list(actual.items()):
            raise ValueError("checkpoint parameters do not match the network described by its config")
        return SVSNetwork(config=config, params=params)

    @staticmethod
    def save(net: SVSNetwork, path: PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as stream:
                CheckpointStore.dump(net, stream)
        except OSError as e:
            logger.error(f"Failed to write checkpoint {path}: {e}")
            raise
        logger.info(f"Saved checkpoint with {len(net.params)} tensors to {path}")
        return path

    @staticmethod
    def load(path: PathLike) -> SVSNetwork:
        path = Path(path)
        with open(path, "rb") as stream:
            net = CheckpointStore.load_stream(stream)
        logger.info(f"Loaded checkpoint {path} ({net.parameter_count()} parameters)")
        return net
