"""Raw tensor files and 8-bit image renders of latents.

Tensor file layout (all little-endian):

    b"PTTENSOR"  u32 version  u8 dtype code  u32 ndim  u64 dims[ndim]  data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

TENSOR_MAGIC = b"PTTENSOR"
TENSOR_VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODE_OF = {v: k for k, v in DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


def dtype_code(dtype) -> int:
    dt = np.dtype(dtype).newbyteorder("<")
    if dt not in _CODE_OF:
        raise FormatError(f"unsupported dtype {dtype}")
    return _CODE_OF[dt]


def write_tensor(path, array: np.ndarray) -> None:
    a = np.asarray(array)
    code = dtype_code(a.dtype)
    a = np.require(a, dtype=DTYPE_CODES[code], requirements="C")
    header = TENSOR_MAGIC + struct.pack("<IBI", TENSOR_VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not a tensor file")
    version, code, ndim = struct.unpack_from("<IBI", raw, 8)
    if version != TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported tensor file version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    off = 8 + struct.calcsize("<IBI")
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    dt = DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - off != count * dt.itemsize:
        raise FormatError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(shape).copy()


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Min-max normalize one image to 0..255; a constant image maps to 0."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros(img.shape, np.uint8)
    return np.round((img - lo) / (hi - lo) * 255.0).astype(np.uint8)


def render_latents(latents: np.ndarray) -> np.ndarray:
    """Tile a [B, C, F, H, W] batch into one grayscale (C != 3) or RGB image.

    Samples run left to right, frames top to bottom; each tile is normalized
    on its own. Grayscale renders show channel 0.
    """
    x = np.asarray(latents)
    if x.ndim != 5:
        raise FormatError(f"expected [B, C, F, H, W] latents, got shape {x.shape}")
    b, c, f, h, w = x.shape
    rgb = c == 3
    canvas = np.zeros((f * h, b * w, 3) if rgb else (f * h, b * w), np.uint8)
    for i in range(b):
        for j in range(f):
            tile = x[i, :, j].transpose(1, 2, 0) if rgb else x[i, 0, j]
            canvas[j * h : (j + 1) * h, i * w : (i + 1) * w] = to_uint8(tile)
    return canvas


def write_image(path, latents: np.ndarray) -> None:
    Image.fromarray(render_latents(latents)).save(path)
