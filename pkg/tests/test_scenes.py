"""Synthetic scene generation, exact detection, and the grounding stubs."""

import numpy as np
import pytest

from mosaic.backend import Condition
from mosaic.geometry import BoundingBox
from mosaic.grids import PixelImage
from mosaic.scenes import (
    SceneObject,
    SceneResolver,
    SyntheticScene,
    detect_background,
    detect_rectangles,
    make_scene_oracle,
    make_squares_scene,
    resolve_position,
    stub_ground,
)


class TestMakeSquaresScene:
    def test_default_three_square_layout(self):
        scene = make_squares_scene()
        assert (scene.width, scene.height) == (64, 64)
        assert scene.background == (0.5, 0.5, 0.5)
        boxes = [obj.box for obj in scene.objects]
        assert boxes == [
            BoundingBox(7, 26, 19, 38),
            BoundingBox(26, 26, 38, 38),
            BoundingBox(45, 26, 57, 38),
        ]

    def test_squares_are_square_and_evenly_sized(self):
        for count in range(1, 6):
            scene = make_squares_scene(count=count, width=96)
            for obj in scene.objects:
                assert obj.box.width == 12
                assert obj.box.height == 12

    def test_colors_distinct(self):
        scene = make_squares_scene(count=5, width=96)
        colors = {obj.color for obj in scene.objects}
        assert len(colors) == 5

    def test_count_bounds(self):
        with pytest.raises(ValueError):
            make_squares_scene(count=0)
        with pytest.raises(ValueError):
            make_squares_scene(count=6)

    def test_too_narrow_rejected(self):
        with pytest.raises(ValueError, match="too narrow"):
            make_squares_scene(count=5, width=64)

    def test_render_paints_exact_boxes(self):
        scene = make_squares_scene()
        img = scene.render()
        first = scene.objects[0]
        b = first.box
        assert np.all(img.values[b.y0 : b.y1, b.x0 : b.x1] == np.asarray(first.color))
        assert tuple(img.values[0, 0]) == scene.background

    def test_ordered_left_to_right(self):
        scene = make_squares_scene()
        ordered = scene.ordered_left_to_right()
        xs = [obj.box.x0 for obj in ordered]
        assert xs == sorted(xs)


class TestSceneValidation:
    def test_object_must_fit(self):
        with pytest.raises(ValueError, match="exceeds"):
            SyntheticScene(
                width=16,
                height=16,
                background=(0.5, 0.5, 0.5),
                objects=(
                    SceneObject("square", (1.0, 0.0, 0.0), BoundingBox(8, 8, 20, 20)),
                ),
            )

    def test_object_color_must_differ_from_background(self):
        with pytest.raises(ValueError, match="differ"):
            SyntheticScene(
                width=16,
                height=16,
                background=(0.5, 0.5, 0.5),
                objects=(
                    SceneObject("square", (0.5, 0.5, 0.5), BoundingBox(0, 0, 4, 4)),
                ),
            )

    def test_duplicate_colors_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            SyntheticScene(
                width=32,
                height=16,
                background=(0.5, 0.5, 0.5),
                objects=(
                    SceneObject("square", (1.0, 0.0, 0.0), BoundingBox(0, 0, 4, 4)),
                    SceneObject("square", (1.0, 0.0, 0.0), BoundingBox(8, 0, 12, 4)),
                ),
            )


class TestDetection:
    def test_background_is_modal_color(self):
        img = make_squares_scene().render()
        assert detect_background(img) == (0.5, 0.5, 0.5)

    def test_rectangles_round_trip_scene(self):
        scene = make_squares_scene(count=4, width=96)
        rects = detect_rectangles(scene.render())
        assert [box for box, _ in rects] == [obj.box for obj in scene.objects]
        assert [color for _, color in rects] == [obj.color for obj in scene.objects]

    def test_rejects_non_rectangular_blob(self):
        vals = np.full((16, 16, 3), 0.5)
        vals[2, 2] = (1.0, 0.0, 0.0)
        vals[5, 9] = (1.0, 0.0, 0.0)  # same color, disjoint: bbox not filled
        with pytest.raises(ValueError, match="rectangle"):
            detect_rectangles(PixelImage(vals))

    def test_empty_scene_detects_nothing(self):
        assert detect_rectangles(PixelImage(np.full((8, 8, 3), 0.5))) == []


class TestResolvePosition:
    @pytest.mark.parametrize(
        "expr,count,expected",
        [
            ("the leftmost square", 3, 0),
            ("leftmost cat", 5, 0),
            ("the rightmost square", 3, 2),
            ("the middle square", 3, 1),
            ("the middle square", 5, 2),
            ("the center lamp", 4, 1),
            ("the first square from the left", 3, 0),
            ("the second square from the left", 3, 1),
            ("the third cat from the left", 4, 2),
            ("the first square from the right", 3, 2),
            ("the second square from the right", 5, 3),
            ("THE LEFTMOST SQUARE", 3, 0),
        ],
    )
    def test_expected_indices(self, expr, count, expected):
        assert resolve_position(expr, count) == expected

    def test_embedded_in_sentence(self):
        assert resolve_position("please edit the rightmost cup", 2) == 1

    @pytest.mark.parametrize(
        "expr,count",
        [
            ("the red square", 3),
            ("the fourth square from the left", 3),
            ("the second square", 3),  # ordinal without direction
            ("the leftmost square from the left", 3),  # mixed forms
        ],
    )
    def test_rejects_unresolvable(self, expr, count):
        with pytest.raises(ValueError):
            resolve_position(expr, count)

    def test_rejects_empty_scene(self):
        with pytest.raises(ValueError):
            resolve_position("the leftmost square", 0)


class TestStubGround:
    def test_grounds_positional_expressions_exactly(self):
        scene = make_squares_scene()
        img = scene.render()
        assert stub_ground(img, "the leftmost square") == scene.objects[0].box
        assert stub_ground(img, "the middle square") == scene.objects[1].box
        assert (
            stub_ground(img, "the second square from the right")
            == scene.objects[1].box
        )

    def test_no_objects(self):
        with pytest.raises(ValueError, match="no objects"):
            stub_ground(PixelImage(np.full((8, 8, 3), 0.5)), "the leftmost square")


class TestSceneResolver:
    def test_composite_edits_each_named_region(self):
        scene = make_squares_scene()
        img = scene.render()
        cond = Condition(
            image=img,
            instruction=(
                "set_color the leftmost square to (0.9, 0.1, 0.1); "
                "remove the rightmost square"
            ),
        )
        out = SceneResolver()(cond)
        left, mid, right = (obj.box for obj in scene.objects)
        assert np.all(
            out.values[left.y0 : left.y1, left.x0 : left.x1]
            == np.array([0.9, 0.1, 0.1])
        )
        # removal fills with the detected background
        assert np.all(
            out.values[right.y0 : right.y1, right.x0 : right.x1] == 0.5
        )
        # untouched object and background survive bit-for-bit
        np.testing.assert_array_equal(
            out.values[mid.y0 : mid.y1, mid.x0 : mid.x1],
            img.values[mid.y0 : mid.y1, mid.x0 : mid.x1],
        )
        np.testing.assert_array_equal(out.values[0:5, :], img.values[0:5, :])

    def test_pattern_is_region_local(self):
        scene = make_squares_scene()
        img = scene.render()
        cond = Condition(
            image=img, instruction="replace the middle square with pattern checker"
        )
        out = SceneResolver()(cond)
        b = scene.objects[1].box
        patch = out.values[b.y0 : b.y1, b.x0 : b.x1]
        # pattern anchored at the region origin: top-left cell is the dark tile
        assert patch[0, 0, 0] == pytest.approx(0.25)
        assert set(np.unique(patch)) == {0.25, 0.75}

    def test_nounless_clause_edits_whole_canvas(self):
        img = make_squares_scene().render()
        out = SceneResolver()(
            Condition(image=img, instruction="set_color to (0, 0, 1)")
        )
        assert np.all(out.values == np.array([0.0, 0.0, 1.0]))

    def test_noop_is_identity(self):
        img = make_squares_scene().render()
        out = SceneResolver()(Condition(image=img, instruction="noop"))
        np.testing.assert_array_equal(out.values, img.values)

    def test_input_image_not_mutated(self):
        img = make_squares_scene().render()
        before = img.values.copy()
        SceneResolver()(
            Condition(image=img, instruction="set_color the leftmost square to (1, 0, 0)")
        )
        np.testing.assert_array_equal(img.values, before)


class TestMakeSceneOracle:
    def test_descriptor(self):
        backend = make_scene_oracle()
        desc = backend.descriptor()
        assert desc["name"] == "scene-oracle-identity"
        assert desc["vae_factor"] == 1

    def test_resolver_is_scene_scoped(self):
        scene = make_squares_scene()
        img = scene.render()
        backend = make_scene_oracle()
        cond = Condition(
            image=img, instruction="set_color the leftmost square to (1, 0, 0)"
        )
        z = backend.encode(img)
        v = backend.predict_velocity(z, 1.0, cond)
        # velocity vanishes exactly where the target equals the current state
        resolved = SceneResolver()(cond)
        expected = z.values - backend.encode(resolved).values
        np.testing.assert_allclose(v.values, expected)
