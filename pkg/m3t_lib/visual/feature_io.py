"""
M3TF feature files.

Layout (little endian): magic b"M3TF" | u16 version | u16 rank |
rank × u32 extents | float32 payload in row-major order.
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from m3t_lib.core.exceptions import FeatureFormatError
from m3t_lib.tensor.tensor import Tensor
from m3t_lib.visual.feature_map import FeatureMap

logger = logging.getLogger(__name__)

MAGIC = b"M3TF"
VERSION = 1
_HEADER = struct.Struct("<4sHH")

PathLike = Union[str, Path]


def encode_features(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    header = _HEADER.pack(MAGIC, VERSION, values.ndim)
    extents = struct.pack(f"<{values.ndim}I", *values.shape)
    return header + extents + values.astype("<f4").tobytes(order="C")


def decode_features(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FeatureFormatError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, version, rank = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{source}: unsupported version {version}")
    offset = _HEADER.size
    if len(blob) < offset + 4 * rank:
        raise FeatureFormatError(f"{source}: truncated extents for rank {rank}")
    shape = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    payload = len(blob) - offset
    if payload != expected:
        kind = "truncated payload" if payload < expected else "trailing bytes after payload"
        raise FeatureFormatError(
            f"{source}: {kind}, shape {tuple(shape)} needs {expected} bytes, found {payload}")
    return np.frombuffer(blob, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)


def save_features(f: FeatureMap, path: PathLike):
    """Writes a FeatureMap as float32 M3TF."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_features(f.values.data))
    logger.debug(f"Wrote features {f.shape} to {path}")


def load_features(path: PathLike) -> FeatureMap:
    """
    Reads an M3TF file into a FeatureMap.

    Raises:
        FeatureFormatError: bad magic, unknown version, truncation or a
            payload whose length disagrees with the declared shape.
    """
    path = Path(path)
    values = decode_features(path.read_bytes(), str(path))
    if values.ndim != 3:
        raise FeatureFormatError(f"{path}: expected rank 3 (H×W×C), found rank {values.ndim}")
    return FeatureMap(Tensor(values, dtype=np.float32))
