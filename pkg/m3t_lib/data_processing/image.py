"""
Image reading, writing and resizing.

Netpbm files (P5 grayscale, P6 color, 8-bit) are parsed directly; PNG and
JPEG go through `matplotlib.image`. Every loader returns float values in
[0, 1] with three channels; grayscale inputs are replicated to three
identical channels.
"""
import logging
from pathlib import Path
from typing import Tuple, Union

import matplotlib.image as mpimg
import numpy as np

from m3t_lib.core.exceptions import ImageFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
NETPBM_SUFFIXES = {".pgm", ".ppm", ".pnm"}
MATPLOTLIB_SUFFIXES = {".png", ".jpg", ".jpeg"}


def _read_token(blob: bytes, pos: int) -> Tuple[bytes, int]:
    """Reads one whitespace-delimited header token, skipping '#' comments."""
    while pos < len(blob):
        c = blob[pos:pos + 1]
        if c == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(blob) and not blob[pos:pos + 1].isspace():
        pos += 1
    return blob[start:pos], pos


def decode_netpbm(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decodes a binary P5/P6 image into uint8 [H×W] or [H×W×3]."""
    magic, pos = _read_token(blob, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{source}: unsupported netpbm magic {magic!r}")
    header = []
    for _ in range(3):
        token, pos = _read_token(blob, pos)
        if not token.isdigit():
            raise ImageFormatError(f"{source}: malformed header token {token!r}")
        header.append(int(token))
    width, height, maxval = header
    if maxval != 255 or width < 1 or height < 1:
        raise ImageFormatError(f"{source}: only 8-bit images with positive size are supported")
    pos += 1  # single whitespace byte before the raster
    channels = 1 if magic == b"P5" else 3
    needed = width * height * channels
    raster = blob[pos:pos + needed]
    if len(raster) != needed:
        raise ImageFormatError(f"{source}: raster has {len(raster)} bytes, expected {needed}")
    pixels = np.frombuffer(raster, dtype=np.uint8)
    return pixels.reshape(height, width) if channels == 1 else pixels.reshape(height, width, 3)


def encode_netpbm(pixels: np.ndarray) -> bytes:
    """Encodes uint8 [H×W] as P5 or [H×W×3] as P6."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        magic = "P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = "P6"
    else:
        raise ImageFormatError(f"cannot encode an array of shape {pixels.shape} as netpbm")
    header = f"{magic}\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels).tobytes()


def write_netpbm(pixels: np.ndarray, path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_netpbm(pixels))


def to_three_channels(pixels: np.ndarray) -> np.ndarray:
    """Grayscale → three identical channels; RGBA → RGB; RGB unchanged."""
    if pixels.ndim == 2:
        return np.repeat(pixels[:, :, None], 3, axis=2)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        return np.repeat(pixels, 3, axis=2)
    if pixels.ndim == 3 and pixels.shape[2] == 4:
        return pixels[:, :, :3]
    if pixels.ndim == 3 and pixels.shape[2] == 3:
        return pixels
    raise ImageFormatError(f"unsupported pixel array shape {pixels.shape}")


def resize_bilinear(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """
    Bilinear resize of [H×W] or [H×W×C] with aligned pixel centres.

    Aspect ratio is not preserved.
    """
    src = np.asarray(values, dtype=np.float64)
    in_h, in_w = src.shape[:2]
    if (in_h, in_w) == (height, width):
        return src.copy()

    def _coords(n_out: int, n_in: int):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = _coords(height, in_h)
    x0, x1, wx = _coords(width, in_w)
    if src.ndim == 3:
        wy, wx = wy[:, None, None], wx[None, :, None]
    else:
        wy, wx = wy[:, None], wx[None, :]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def read_pixels(path: PathLike) -> np.ndarray:
    """Reads an image as float values in [0, 1], [H×W] or [H×W×C]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Image file not found: {path}")
    suffix = path.suffix.lower()
    if suffix in NETPBM_SUFFIXES:
        return decode_netpbm(path.read_bytes(), str(path)).astype(np.float64) / 255.0
    if suffix in MATPLOTLIB_SUFFIXES:
        try:
            pixels = np.asarray(mpimg.imread(str(path)))
        except (OSError, ValueError, SyntaxError) as e:
            raise ImageFormatError(f"{path}: {e}") from e
        pixels = pixels.astype(np.float64)
        # PNG loads as floats in [0, 1]; JPEG as 8-bit integers.
        return pixels / 255.0 if pixels.max(initial=0.0) > 1.0 else pixels
    raise ImageFormatError(f"{path}: unsupported image type '{suffix}'")


def load_image(path: PathLike, size: int) -> np.ndarray:
    """
    Loads an image as a [size×size×3] float array in [0, 1].

    Args:
        path: A PGM, PPM, PNG or JPEG file.
        size: Target side length; the image is resized bilinearly.
    """
    pixels = to_three_channels(read_pixels(path))
    resized = resize_bilinear(pixels, size, size)
    logger.debug(f"Loaded {path} {pixels.shape} -> {resized.shape}")
    return np.clip(resized, 0.0, 1.0)
