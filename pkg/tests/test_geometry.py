import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaic.geometry import (
    BoundingBox,
    LatentMask,
    RegionInstance,
    box_to_latent_mask,
    crop,
    crop_latent,
    make_region_instance,
    mask_union,
    pad_to_multiple,
    place,
)
from mosaic.grids import LatentGrid, PixelImage


def boxes(max_extent=64):
    coords = st.integers(min_value=0, max_value=max_extent)
    return st.tuples(coords, coords, coords, coords).filter(
        lambda t: t[0] < t[2] and t[1] < t[3]
    ).map(lambda t: BoundingBox(*t))


class TestBoundingBox:
    def test_half_open_dimensions(self):
        box = BoundingBox(2, 3, 10, 7)
        assert box.width == 8
        assert box.height == 4
        assert box.area == 32

    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 5, 4)
        with pytest.raises(ValueError):
            BoundingBox(0, 9, 4, 2)

    def test_rejects_negative_origin(self):
        with pytest.raises(ValueError):
            BoundingBox(-1, 0, 4, 4)

    def test_list_round_trip(self):
        box = BoundingBox(1, 2, 3, 4)
        assert BoundingBox.from_list(box.to_list()) == box

    def test_contains(self):
        outer = BoundingBox(0, 0, 10, 10)
        assert outer.contains(BoundingBox(2, 2, 8, 8))
        assert not BoundingBox(2, 2, 8, 8).contains(outer)


class TestPadToMultiple:
    # the three documented cases
    def test_already_aligned_is_identity(self):
        box = BoundingBox(16, 16, 32, 32)
        assert pad_to_multiple(box, 16, 64, 64) == box

    def test_grows_outward_to_grid(self):
        padded = pad_to_multiple(BoundingBox(13, 26, 25, 38), 16, 64, 64)
        assert padded == BoundingBox(0, 16, 32, 48)

    def test_snaps_to_last_tile_at_image_edge(self):
        padded = pad_to_multiple(BoundingBox(60, 60, 64, 64), 16, 64, 64)
        assert padded == BoundingBox(48, 48, 64, 64)

    def test_snaps_interior_box_straddling_tiles(self):
        padded = pad_to_multiple(BoundingBox(50, 50, 63, 63), 16, 64, 64)
        assert padded == BoundingBox(48, 48, 64, 64)

    def test_rejects_multiple_larger_than_image(self):
        with pytest.raises(ValueError):
            pad_to_multiple(BoundingBox(0, 0, 4, 4), 128, 64, 64)

    @given(box=boxes(max_extent=64), multiple=st.sampled_from([1, 2, 4, 8, 16]))
    @settings(max_examples=200, deadline=None)
    def test_superset_aligned_inside(self, box, multiple):
        """Padded box contains the original, has multiple-aligned dims and
        offsets, and stays inside the canvas."""
        padded = pad_to_multiple(box, multiple, 64, 64)
        assert padded.contains(box)
        assert padded.width % multiple == 0
        assert padded.height % multiple == 0
        assert padded.x0 % multiple == 0
        assert padded.y0 % multiple == 0
        assert 0 <= padded.x0 and padded.x1 <= 64
        assert 0 <= padded.y0 and padded.y1 <= 64


class TestBoxToLatentMask:
    def test_identity_factor(self):
        mask = box_to_latent_mask(BoundingBox(1, 2, 3, 5), 1, 8, 8)
        expected = np.zeros((8, 8), dtype=bool)
        expected[2:5, 1:3] = True
        assert np.array_equal(mask.bits, expected)

    def test_any_coverage_rounds_outward(self):
        # box (1,1)-(3,3) at f=2 touches latent cells 0 and 1 on both axes
        mask = box_to_latent_mask(BoundingBox(1, 1, 3, 3), 2, 4, 4)
        expected = np.zeros((4, 4), dtype=bool)
        expected[0:2, 0:2] = True
        assert np.array_equal(mask.bits, expected)

    def test_cell_count(self):
        mask = box_to_latent_mask(BoundingBox(0, 0, 4, 4), 1, 8, 8)
        assert mask.cell_count == 16


class TestCropPlace:
    def test_crop_pixel_region(self):
        values = np.zeros((6, 6, 3))
        values[2:4, 1:5] = 0.5
        out = crop(PixelImage(values), BoundingBox(1, 2, 5, 4))
        assert out.values.shape == (2, 4, 3)
        assert (out.values == 0.5).all()

    def test_crop_latent_requires_alignment(self):
        latent = LatentGrid(np.zeros((1, 8, 8)))
        with pytest.raises(ValueError, match="aligned"):
            crop_latent(latent, BoundingBox(1, 0, 5, 4), 2)

    def test_place_crop_round_trip(self):
        rng = np.random.default_rng(2)
        latent = LatentGrid(rng.normal(size=(2, 8, 8)))
        box = BoundingBox(2, 4, 6, 8)
        region = crop_latent(latent, box, 1)
        placed = place(region, box, 1, 8, 8)
        sub = placed.values[:, 4:8, 2:6]
        assert np.array_equal(sub, latent.values[:, 4:8, 2:6])
        outside = placed.values.copy()
        outside[:, 4:8, 2:6] = 0.0
        assert (outside == 0.0).all()

    @given(
        x0=st.integers(0, 3), y0=st.integers(0, 3),
        w=st.integers(1, 4), h=st.integers(1, 4),
    )
    @settings(max_examples=100, deadline=None)
    def test_round_trip_property(self, x0, y0, w, h):
        box = BoundingBox(2 * x0, 2 * y0, 2 * (x0 + w), 2 * (y0 + h))
        if box.x1 > 16 or box.y1 > 16:
            return
        rng = np.random.default_rng(1)
        latent = LatentGrid(rng.normal(size=(1, 8, 8)))
        region = crop_latent(latent, box, 2)
        assert region.values.shape == (1, h, w)
        placed = place(region, box, 2, 8, 8)
        bits = box_to_latent_mask(box, 2, 8, 8).bits
        assert np.array_equal(placed.values[:, bits], latent.values[:, bits])


class TestMaskUnion:
    def test_union_of_disjoint(self):
        a = box_to_latent_mask(BoundingBox(0, 0, 2, 2), 1, 4, 4)
        b = box_to_latent_mask(BoundingBox(2, 2, 4, 4), 1, 4, 4)
        union = mask_union([a, b])
        assert union.cell_count == 8

    def test_empty_needs_shape(self):
        union = mask_union([], shape=(4, 4))
        assert union.cell_count == 0
        with pytest.raises(ValueError):
            mask_union([])

    def test_union_idempotent(self):
        a = box_to_latent_mask(BoundingBox(1, 1, 3, 3), 1, 4, 4)
        assert np.array_equal(mask_union([a, a]).bits, a.bits)

    @given(data=st.data())
    @settings(max_examples=50, deadline=None)
    def test_union_is_elementwise_or(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 10_000)))
        bits_a = rng.random((4, 4)) < 0.5
        bits_b = rng.random((4, 4)) < 0.5
        union = mask_union([LatentMask(bits_a), LatentMask(bits_b)])
        assert np.array_equal(union.bits, bits_a | bits_b)


class TestRegionInstance:
    def test_make_region_instance_pads_and_crops(self):
        values = np.linspace(0, 1, 64 * 64 * 3).reshape(64, 64, 3)
        image = PixelImage(values)
        region = make_region_instance(
            image, "the leftmost square", "remove",
            BoundingBox(13, 26, 25, 38), vae_factor=2, patch=2,
        )
        assert region.padded_box.width % 4 == 0
        assert region.padded_box.contains(region.box)
        assert region.crop_image.values.shape == (
            region.padded_box.height, region.padded_box.width, 3,
        )
        # mask rasterizes the grounded box, not the padded one
        assert region.mask.cell_count == box_to_latent_mask(
            region.box, 2, 32, 32
        ).cell_count

    def test_mask_footprint_inside_padded_footprint(self):
        image = PixelImage(np.zeros((64, 64, 3)))
        region = make_region_instance(
            image, "x", "remove", BoundingBox(5, 5, 19, 17), vae_factor=2, patch=2,
        )
        padded_bits = box_to_latent_mask(region.padded_box, 2, 32, 32).bits
        assert not (region.mask.bits & ~padded_bits).any()

    def test_image_must_divide_by_factor(self):
        image = PixelImage(np.zeros((63, 64, 3)))
        with pytest.raises(ValueError, match="vae_factor|divisible"):
            make_region_instance(
                image, "x", "remove", BoundingBox(0, 0, 8, 8), vae_factor=2, patch=1,
            )

    def test_rejects_empty_sub_instruction(self):
        image = PixelImage(np.zeros((8, 8, 3)))
        with pytest.raises(ValueError):
            RegionInstance(
                expression="x", sub_instruction="",
                box=BoundingBox(0, 0, 4, 4), padded_box=BoundingBox(0, 0, 4, 4),
                mask=box_to_latent_mask(BoundingBox(0, 0, 4, 4), 1, 8, 8),
                crop_image=crop(image, BoundingBox(0, 0, 4, 4)),
            )
