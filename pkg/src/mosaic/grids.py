"""Core value types: latent grids, pixel images, and seeded noise fields.

Everything downstream (geometry, scheduling, fusion) operates on these
containers. Arrays are float64 end to end; images are only quantized to
8-bit at final PNG write.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LatentGrid",
    "PixelImage",
    "NoiseField",
    "sample_noise",
    "lerp",
    "masked_blend",
    "patch_token_count",
]


def _as_float64(values: np.ndarray, what: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{what} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    arr = arr.copy() if arr is values else arr
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LatentGrid:
    """Channel-first (C, H, W) float64 grid. Immutable once constructed."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_float64(self.values, "LatentGrid", 3))
        if min(self.values.shape) < 1:
            raise ValueError(f"LatentGrid dims must be positive, got {self.values.shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class PixelImage:
    """(H, W, 3) float64 image with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _as_float64(self.values, "PixelImage", 3)
        if arr.shape[2] != 3:
            raise ValueError(f"PixelImage needs 3 channels, got shape {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("PixelImage values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NoiseField(LatentGrid):
    """A LatentGrid drawn from the deterministic seeded sampler."""

    seed: int = 0


def _normal_stream(count: int, seed: int) -> np.ndarray:
    # Counter-based bit generator + explicit Box-Muller: the byte stream for a
    # given (seed, count) is fixed across platforms and library versions
    # because only the raw Philox bits are consumed, never a library-provided
    # distribution.
    bits = np.random.Philox(key=np.uint64(seed)).random_raw(2 * count)
    high = np.uint64(11)
    u1 = ((bits[0::2] >> high) + np.uint64(1)) * 2.0**-53  # (0, 1]: log-safe
    u2 = (bits[1::2] >> high) * 2.0**-53  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def sample_noise(channels: int, height: int, width: int, seed: int) -> NoiseField:
    """Draw a standard-normal noise grid, bit-identical for equal (seed, shape).

    Distinct shapes under the same seed are distinct draws; no block of a
    larger field is promised to match a smaller field's draw.
    """
    if channels < 1 or height < 1 or width < 1:
        raise ValueError(f"noise shape must be positive, got {(channels, height, width)}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    flat = _normal_stream(channels * height * width, seed)
    return NoiseField(values=flat.reshape(channels, height, width), seed=seed)


def lerp(a: LatentGrid, b: LatentGrid, weight: float) -> LatentGrid:
    """Pointwise (1-w)*a + w*b. Exactly a at w=0 and exactly b at w=1."""
    if a.shape != b.shape:
        raise ValueError(f"lerp shape mismatch: {a.shape} vs {b.shape}")
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"lerp weight must lie in [0, 1], got {weight}")
    # Endpoints short-circuit so the result is bit-for-bit the input grid.
    if weight == 0.0:
        return LatentGrid(a.values)
    if weight == 1.0:
        return LatentGrid(b.values)
    return LatentGrid((1.0 - weight) * a.values + weight * b.values)


def masked_blend(base: LatentGrid, overlay: LatentGrid, mask) -> LatentGrid:
    """Per-cell select: overlay where mask is set, base elsewhere.

    Selection (np.where), not arithmetic, so unselected cells are bit-exact
    copies of the corresponding input. `mask` is an (H, W) binary array or
    any object exposing one as `.bits` (all channels of a cell switch
    together).
    """
    bits = np.asarray(getattr(mask, "bits", mask))
    if base.shape != overlay.shape:
        raise ValueError(f"masked_blend shape mismatch: {base.shape} vs {overlay.shape}")
    if bits.shape != (base.height, base.width):
        raise ValueError(
            f"mask shape {bits.shape} does not match grid plane {(base.height, base.width)}"
        )
    return LatentGrid(np.where(bits.astype(bool)[None, :, :], overlay.values, base.values))


def patch_token_count(height_px: int, width_px: int, vae_factor: int, patch: int) -> int:
    """Transformer token count for an image patchified after VAE downsampling.

    ceil(H / (f*p)) * ceil(W / (f*p)); exact division when the dims are
    already padded to a multiple of f*p.
    """
    if height_px < 1 or width_px < 1:
        raise ValueError(f"pixel dims must be positive, got {(height_px, width_px)}")
    if vae_factor < 1 or patch < 1:
        raise ValueError(f"vae_factor and patch must be positive, got {(vae_factor, patch)}")
    cell = vae_factor * patch
    return math.ceil(height_px / cell) * math.ceil(width_px / cell)
