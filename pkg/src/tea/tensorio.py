"""File I/O for attack images: raw float tensors and 8-bit PNG.

The tensor format is four magic bytes "TEA1", three little-endian uint32
dims (C, H, W), then C*H*W little-endian float32 values in row-major order
per channel. PNGs map to [0, 1] by v/255 on ingestion.
"""

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import imageops

MAGIC = b"TEA1"
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_HEADER = struct.Struct("<III")


def write_tensor(path, arr: np.ndarray) -> None:
    """Persist a (C, H, W) float array; values are stored as float32."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected (C, H, W) array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty tensor")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*arr.shape))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + _HEADER.size or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a TEA1 tensor file")
    c, h, w = _HEADER.unpack_from(raw, 4)
    if min(c, h, w) < 1:
        raise ValueError(f"{path}: bad dims ({c}, {h}, {w})")
    expected = 4 + _HEADER.size + 4 * c * h * w
    if len(raw) != expected:
        raise ValueError(f"{path}: file length {len(raw)}, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=4 + _HEADER.size)
    return data.reshape(c, h, w).astype(np.float64)


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as pil:
        if pil.format != "PNG":
            raise ValueError(f"{path}: not a PNG file")
        if pil.mode not in ("L", "RGB"):
            raise ValueError(
                f"{path}: unsupported PNG mode {pil.mode!r}; need 8-bit gray or RGB"
            )
        pixels = np.asarray(pil, dtype=np.float64) / 255.0
    if pixels.ndim == 2:
        return pixels[None]
    return np.transpose(pixels, (2, 0, 1))


def save_png(path, img: np.ndarray) -> None:
    img = imageops.validate_image(img, "image")
    if img.shape[0] not in (1, 3):
        raise ValueError(f"can only write 1- or 3-channel PNGs, got {img.shape[0]}")
    bytes_hwc = np.round(img * 255.0).astype(np.uint8)
    if img.shape[0] == 1:
        PILImage.fromarray(bytes_hwc[0], mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(np.transpose(bytes_hwc, (1, 2, 0)), mode="RGB").save(path, format="PNG")


def resize(img: np.ndarray, height: int, width: int, method: str = "bilinear") -> np.ndarray:
    filters = {
        "nearest": PILImage.Resampling.NEAREST,
        "bilinear": PILImage.Resampling.BILINEAR,
    }
    if method not in filters:
        raise ValueError(f"method must be one of {sorted(filters)}, got {method!r}")
    if height < 1 or width < 1:
        raise ValueError(f"bad output size {height}x{width}")
    img = imageops.validate_image(img, "image")
    planes = [
        np.asarray(
            PILImage.fromarray(ch.astype(np.float32), mode="F").resize(
                (width, height), filters[method]
            ),
            dtype=np.float64,
        )
        for ch in img
    ]
    return np.clip(np.stack(planes), 0.0, 1.0)


def ingest_image(path, resize_to=None, method: str = "bilinear") -> np.ndarray:
    """Load a PNG or TEA1 file as a validated [0, 1] image, optionally resized."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(_PNG_SIGNATURE):
        img = load_png(path)
    elif head.startswith(MAGIC):
        img = imageops.validate_image(read_tensor(path), str(path))
    else:
        raise ValueError(f"{path}: neither PNG nor TEA1 tensor")
    if resize_to is not None:
        img = resize(img, resize_to[0], resize_to[1], method)
    return img
