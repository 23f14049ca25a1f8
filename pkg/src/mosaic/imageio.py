"""PNG input/output for images and masks.

The pipeline is floating point end to end; quantization to 8-bit happens
only here, at the file boundary. Reference pixels loaded from an 8-bit PNG
sit exactly on the 1/255 grid, so saving them again reproduces the same
bytes, which is what makes bit-exact background claims carry through to the
files on disk.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .grids import PixelImage

__all__ = [
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "image_to_png_bytes",
    "image_from_png_bytes",
    "quantize",
]


def quantize(image: PixelImage) -> np.ndarray:
    """Map [0,1] floats to uint8 with round-half-away behavior via rint."""
    return np.rint(np.clip(image.values, 0.0, 1.0) * 255.0).astype(np.uint8)


def _to_pil(image: PixelImage) -> Image.Image:
    return Image.fromarray(quantize(image), mode="RGB")


def _from_pil(img: Image.Image) -> PixelImage:
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return PixelImage(arr)


def save_image(image: PixelImage, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _to_pil(image).save(path, format="PNG")
    return path


def load_image(path: str | Path) -> PixelImage:
    with Image.open(path) as img:
        return _from_pil(img)


def image_to_png_bytes(image: PixelImage) -> bytes:
    buf = io.BytesIO()
    _to_pil(image).save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> PixelImage:
    with Image.open(io.BytesIO(data)) as img:
        return _from_pil(img)


def save_mask(bits: np.ndarray, path: str | Path) -> Path:
    """Write a boolean (H, W) bitmap as an 8-bit grayscale PNG (255 inside)."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(bits.astype(bool), 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )
    return path


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128
