"""Box arithmetic and pixel/latent coordinate mapping.

Boxes are half-open pixel rectangles [x0, x1) x [y0, y1) with the origin at
the top-left. Latent masks live on the downsampled grid (one cell per
vae_factor x vae_factor pixel block) and use any-coverage rasterization: a
cell is set as soon as its pixel footprint intersects the box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import LatentGrid, PixelImage

__all__ = [
    "BoundingBox",
    "LatentMask",
    "RegionInstance",
    "crop",
    "pad_to_multiple",
    "box_to_latent_mask",
    "crop_latent",
    "place",
    "mask_union",
    "make_region_instance",
]


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open integer pixel rectangle."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ValueError(f"box coordinate {name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(
                f"degenerate box [{self.x0}, {self.x1}) x [{self.y0}, {self.y1})"
            )

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def to_list(self) -> list[int]:
        """Serialized form used in requests and manifests."""
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, quad: Sequence[int]) -> "BoundingBox":
        if len(quad) != 4:
            raise ValueError(f"box quadruple must have 4 entries, got {list(quad)}")
        return cls(*[int(v) for v in quad])

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and self.x1 >= other.x1
            and self.y1 >= other.y1
        )


@dataclass(frozen=True)
class LatentMask:
    """Binary (H, W) mask on the latent grid."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {arr.shape}")
        arr = arr.astype(bool).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def cell_count(self) -> int:
        return int(self.bits.sum())


def crop(image: PixelImage, box: BoundingBox) -> PixelImage:
    """Exact pixel sub-rectangle of `image`."""
    if box.x1 > image.width or box.y1 > image.height:
        raise ValueError(
            f"box {box.to_list()} exceeds image bounds {image.width}x{image.height}"
        )
    return PixelImage(image.values[box.y0 : box.y1, box.x0 : box.x1, :])


def _pad_axis(lo: int, hi: int, multiple: int, limit: int) -> tuple[int, int]:
    if limit < multiple:
        raise ValueError(
            f"image extent {limit} is smaller than padding multiple {multiple}"
        )
    # Snap outward to the multiple-grid. Grid alignment of the offsets is what
    # lets latent crops and placements address whole cells later on.
    lo2 = (lo // multiple) * multiple
    hi2 = -((-hi) // multiple) * multiple
    if hi2 > limit:
        # Clamp to the image, then grow inward to keep the size divisible.
        hi2 = limit
        size = -((-(hi2 - lo2)) // multiple) * multiple
        lo2 = hi2 - min(size, (limit // multiple) * multiple)
    return lo2, hi2


def pad_to_multiple(
    box: BoundingBox, multiple: int, image_width: int, image_height: int
) -> BoundingBox:
    """Smallest grid-aligned superset of `box` with dims divisible by `multiple`.

    Offsets and extents both land on the multiple-grid, so padded boxes stay
    addressable on the latent grid. Near image edges the box is clamped and
    grown inward to preserve divisibility; raises when the image itself is
    smaller than `multiple` in either dimension.
    """
    if multiple < 1:
        raise ValueError(f"padding multiple must be positive, got {multiple}")
    if box.x1 > image_width or box.y1 > image_height:
        raise ValueError(
            f"box {box.to_list()} exceeds image bounds {image_width}x{image_height}"
        )
    x0, x1 = _pad_axis(box.x0, box.x1, multiple, image_width)
    y0, y1 = _pad_axis(box.y0, box.y1, multiple, image_height)
    return BoundingBox(x0, y0, x1, y1)


def box_to_latent_mask(
    box: BoundingBox, vae_factor: int, latent_height: int, latent_width: int
) -> LatentMask:
    """Rasterize a pixel box onto the latent grid with any-coverage semantics.

    Cell (i, j) is set iff its vae_factor-square pixel footprint intersects
    the box, so partially covered border cells are included.
    """
    if vae_factor < 1:
        raise ValueError(f"vae_factor must be positive, got {vae_factor}")
    if box.x1 > latent_width * vae_factor or box.y1 > latent_height * vae_factor:
        raise ValueError(
            f"box {box.to_list()} not covered by a {latent_height}x{latent_width} "
            f"latent grid at factor {vae_factor}"
        )
    bits = np.zeros((latent_height, latent_width), dtype=bool)
    ry0 = box.y0 // vae_factor
    ry1 = -((-box.y1) // vae_factor)
    rx0 = box.x0 // vae_factor
    rx1 = -((-box.x1) // vae_factor)
    bits[ry0:ry1, rx0:rx1] = True
    return LatentMask(bits)


def _require_aligned(box: BoundingBox, vae_factor: int, op: str) -> None:
    if any(v % vae_factor for v in (box.x0, box.y0, box.x1, box.y1)):
        raise ValueError(
            f"{op} requires a box aligned to the codec factor {vae_factor}, "
            f"got {box.to_list()}"
        )


def crop_latent(latent: LatentGrid, box: BoundingBox, vae_factor: int) -> LatentGrid:
    """Latent-grid crop of `box` (pixel coordinates divided by the factor)."""
    _require_aligned(box, vae_factor, "crop_latent")
    y0, y1 = box.y0 // vae_factor, box.y1 // vae_factor
    x0, x1 = box.x0 // vae_factor, box.x1 // vae_factor
    if y1 > latent.height or x1 > latent.width:
        raise ValueError(
            f"box {box.to_list()} exceeds latent grid {latent.height}x{latent.width} "
            f"at factor {vae_factor}"
        )
    return LatentGrid(latent.values[:, y0:y1, x0:x1])


def place(
    region: LatentGrid,
    box: BoundingBox,
    vae_factor: int,
    canvas_height: int,
    canvas_width: int,
) -> LatentGrid:
    """Write a region latent into a zero canvas at the box's latent offset."""
    _require_aligned(box, vae_factor, "place")
    y0, x0 = box.y0 // vae_factor, box.x0 // vae_factor
    rh, rw = box.height // vae_factor, box.width // vae_factor
    if (region.height, region.width) != (rh, rw):
        raise ValueError(
            f"region grid {region.height}x{region.width} does not match box "
            f"{box.to_list()} at factor {vae_factor} (expected {rh}x{rw})"
        )
    if y0 + rh > canvas_height or x0 + rw > canvas_width:
        raise ValueError(
            f"placement of box {box.to_list()} exceeds canvas "
            f"{canvas_height}x{canvas_width}"
        )
    canvas = np.zeros((region.channels, canvas_height, canvas_width), dtype=np.float64)
    canvas[:, y0 : y0 + rh, x0 : x0 + rw] = region.values
    return LatentGrid(canvas)


def mask_union(
    masks: Sequence[LatentMask], shape: tuple[int, int] | None = None
) -> LatentMask:
    """Cellwise OR of masks; `shape` is required for an empty sequence."""
    if not masks:
        if shape is None:
            raise ValueError("mask_union of no masks needs an explicit shape")
        return LatentMask(np.zeros(shape, dtype=bool))
    first = masks[0]
    for m in masks[1:]:
        if (m.height, m.width) != (first.height, first.width):
            raise ValueError(
                f"mask shapes differ: {(first.height, first.width)} vs "
                f"{(m.height, m.width)}"
            )
    if shape is not None and shape != (first.height, first.width):
        raise ValueError(f"explicit shape {shape} does not match masks")
    out = np.zeros((first.height, first.width), dtype=bool)
    for m in masks:
        out |= m.bits
    return LatentMask(out)


@dataclass(frozen=True)
class RegionInstance:
    """A grounded sub-edit: referring expression, instruction, and geometry.

    `box` is the grounded rectangle (the editable area; `mask` is its
    rasterization), while `padded_box` is the codec-aligned superset whose
    crop actually feeds the regional branch.
    """

    expression: str
    sub_instruction: str
    box: BoundingBox
    padded_box: BoundingBox
    mask: LatentMask
    crop_image: PixelImage

    def __post_init__(self) -> None:
        if not self.expression.strip():
            raise ValueError("region expression must be non-empty")
        if not self.sub_instruction.strip():
            raise ValueError("region sub-instruction must be non-empty")
        if not self.padded_box.contains(self.box):
            raise ValueError(
                f"padded box {self.padded_box.to_list()} does not contain "
                f"{self.box.to_list()}"
            )
        if (self.crop_image.height, self.crop_image.width) != (
            self.padded_box.height,
            self.padded_box.width,
        ):
            raise ValueError(
                f"crop {self.crop_image.height}x{self.crop_image.width} does not "
                f"match padded box {self.padded_box.to_list()}"
            )


def make_region_instance(
    reference: PixelImage,
    expression: str,
    sub_instruction: str,
    box: BoundingBox,
    vae_factor: int,
    patch: int,
) -> RegionInstance:
    """Pad, crop and rasterize one grounded region against the reference image."""
    if reference.height % vae_factor or reference.width % vae_factor:
        raise ValueError(
            f"image {reference.width}x{reference.height} is not divisible by the "
            f"codec factor {vae_factor}"
        )
    padded = pad_to_multiple(
        box, vae_factor * patch, reference.width, reference.height
    )
    mask = box_to_latent_mask(
        box, vae_factor, reference.height // vae_factor, reference.width // vae_factor
    )
    return RegionInstance(
        expression=expression,
        sub_instruction=sub_instruction,
        box=box,
        padded_box=padded,
        mask=mask,
        crop_image=crop(reference, padded),
    )
