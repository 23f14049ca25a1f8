"""Synthetic rectangle scenes: generation, detection, and grounding stubs.

Scenes are axis-aligned solid-color rectangles on a uniform background, so
object boxes can be recovered exactly from pixels alone. That recovery powers
two offline stand-ins for learned components:

* `stub_ground` resolves positional referring expressions ("the leftmost
  square", "the second cat from the left") to exact boxes;
* `SceneResolver` is a strong-backbone oracle resolver: it applies every
  clause of a composite instruction to its named object's box, which is what
  a capable editing model conditioned on the full instruction would produce.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .backend import Condition
from .geometry import BoundingBox
from .grids import PixelImage
from .oracle import OracleBackend, ToyEditOp, apply_toy_op, make_oracle_backend, parse_toy_instruction

__all__ = [
    "SceneObject",
    "SyntheticScene",
    "make_squares_scene",
    "detect_rectangles",
    "detect_background",
    "resolve_position",
    "stub_ground",
    "SceneResolver",
    "make_scene_oracle",
]

_ORDINALS = {"first": 1, "second": 2, "third": 3, "fourth": 4, "fifth": 5}

_POSITION_RE = re.compile(
    r"(?:the\s+)?(?:"
    r"(?P<side>leftmost|rightmost|middle|center)"
    r"|(?P<ordinal>first|second|third|fourth|fifth)"
    r")\s+(?P<noun>\w+)"
    r"(?:\s+from\s+the\s+(?P<direction>left|right))?\s*$"
)


@dataclass(frozen=True)
class SceneObject:
    noun: str
    color: tuple[float, float, float]
    box: BoundingBox


@dataclass(frozen=True)
class SyntheticScene:
    """Uniform background plus non-overlapping solid rectangles."""

    width: int
    height: int
    background: tuple[float, float, float]
    objects: tuple[SceneObject, ...]

    def __post_init__(self) -> None:
        for obj in self.objects:
            if obj.box.x1 > self.width or obj.box.y1 > self.height:
                raise ValueError(f"object box {obj.box.to_list()} exceeds scene")
            if obj.color == self.background:
                raise ValueError("object color must differ from the background")
        colors = [obj.color for obj in self.objects]
        if len(set(colors)) != len(colors):
            raise ValueError("object colors must be distinct for exact detection")

    def render(self) -> PixelImage:
        canvas = np.empty((self.height, self.width, 3), dtype=np.float64)
        canvas[:, :, :] = np.asarray(self.background)
        for obj in self.objects:
            b = obj.box
            canvas[b.y0 : b.y1, b.x0 : b.x1, :] = np.asarray(obj.color)
        return PixelImage(canvas)

    def ordered_left_to_right(self) -> tuple[SceneObject, ...]:
        return tuple(sorted(self.objects, key=lambda o: (o.box.x0, o.box.y0)))


def make_squares_scene(
    count: int = 3,
    width: int = 64,
    height: int = 64,
    noun: str = "square",
    side: int = 12,
) -> SyntheticScene:
    """Evenly spaced solid squares on a mid-gray background."""
    if count < 1 or count > 5:
        raise ValueError(f"square count must be 1..5, got {count}")
    palette = [
        (0.2, 0.4, 0.8),
        (0.8, 0.7, 0.2),
        (0.3, 0.8, 0.4),
        (0.8, 0.3, 0.6),
        (0.2, 0.7, 0.7),
    ]
    gap = (width - count * side) // (count + 1)
    if gap < 1:
        raise ValueError("scene too narrow for the requested squares")
    y0 = (height - side) // 2
    objects = []
    for i in range(count):
        x0 = gap + i * (side + gap)
        objects.append(
            SceneObject(
                noun=noun,
                color=palette[i],
                box=BoundingBox(x0, y0, x0 + side, y0 + side),
            )
        )
    return SyntheticScene(
        width=width, height=height, background=(0.5, 0.5, 0.5), objects=tuple(objects)
    )


def detect_background(image: PixelImage) -> tuple[float, float, float]:
    """Most frequent color in the image."""
    flat = image.values.reshape(-1, 3)
    colors, counts = np.unique(flat, axis=0, return_counts=True)
    return tuple(colors[int(np.argmax(counts))])  # type: ignore[return-value]


def detect_rectangles(image: PixelImage) -> list[tuple[BoundingBox, tuple[float, float, float]]]:
    """Recover solid rectangles from a rendered scene, ordered left to right.

    Each non-background color is assumed to tile exactly one filled axis-
    aligned rectangle; raises if a color's pixels do not fill their bounding
    box (the image did not come from a rectangle scene).
    """
    bg = np.asarray(detect_background(image))
    flat = image.values.reshape(-1, 3)
    colors = np.unique(flat, axis=0)
    found: list[tuple[BoundingBox, tuple[float, float, float]]] = []
    for color in colors:
        if np.array_equal(color, bg):
            continue
        mask = np.all(image.values == color, axis=2)
        ys, xs = np.nonzero(mask)
        box = BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        if int(mask.sum()) != box.area:
            raise ValueError(
                f"color {tuple(color)} does not fill a rectangle; not a scene image"
            )
        found.append((box, tuple(color)))
    found.sort(key=lambda item: (item[0].x0, item[0].y0))
    return found


def resolve_position(expression: str, count: int) -> int:
    """Index (left-to-right) named by a positional referring expression."""
    if count < 1:
        raise ValueError("no objects to resolve against")
    m = _POSITION_RE.search(expression.strip().lower())
    if m is None:
        raise ValueError(f"cannot resolve positional expression {expression!r}")
    if m.group("side"):
        side = m.group("side")
        if m.group("direction"):
            raise ValueError(f"mixed positional forms in {expression!r}")
        if side == "leftmost":
            return 0
        if side == "rightmost":
            return count - 1
        return (count - 1) // 2  # middle / center
    rank = _ORDINALS[m.group("ordinal")]
    if rank > count:
        raise ValueError(f"{expression!r} names object {rank} of only {count}")
    direction = m.group("direction")
    if direction is None:
        raise ValueError(f"ordinal expression needs 'from the left/right': {expression!r}")
    return rank - 1 if direction == "left" else count - rank


def stub_ground(image: PixelImage, expression: str) -> BoundingBox:
    """Detection-based localizer for synthetic scenes (exact boxes)."""
    rects = detect_rectangles(image)
    if not rects:
        raise ValueError("no objects detected in the image")
    return rects[resolve_position(expression, len(rects))][0]


class SceneResolver:
    """Strong-backbone target resolver for rectangle scenes.

    Every clause of the instruction is applied, each scoped to the box of the
    object its noun phrase names (noun-less clauses apply to the full canvas,
    matching the weak grammar resolver on crops). `remove` fills with the
    detected background color; patterns are anchored to the edited region's
    local coordinates.
    """

    def __call__(self, condition: Condition) -> PixelImage:
        ops = parse_toy_instruction(condition.instruction)
        canvas = condition.image.values.copy()
        rects: list[tuple[BoundingBox, tuple[float, float, float]]] | None = None
        background: tuple[float, float, float] | None = None
        for op in ops:
            if op.kind == "noop":
                continue
            if op.noun is None:
                canvas = apply_toy_op(PixelImage(canvas), op).values.copy()
                continue
            if rects is None:
                rects = detect_rectangles(condition.image)
                background = detect_background(condition.image)
            box = rects[resolve_position(op.noun, len(rects))][0]
            canvas[box.y0 : box.y1, box.x0 : box.x1, :] = self._region_fill(
                op, box, background
            )
        return PixelImage(canvas)

    @staticmethod
    def _region_fill(
        op: ToyEditOp, box: BoundingBox, background: tuple[float, float, float] | None
    ) -> np.ndarray:
        if op.kind == "set_color":
            return np.broadcast_to(
                np.asarray(op.color, dtype=np.float64), (box.height, box.width, 3)
            )
        if op.kind == "remove":
            return np.broadcast_to(
                np.asarray(background, dtype=np.float64), (box.height, box.width, 3)
            )
        if op.kind == "replace_with_constant_pattern":
            blank = PixelImage(np.zeros((box.height, box.width, 3)))
            return apply_toy_op(blank, op).values
        raise ValueError(f"unhandled op kind {op.kind!r}")


def make_scene_oracle(codec: str = "identity", patch: int = 1) -> OracleBackend:
    """Oracle backend with the strong scene resolver (the default edit backend)."""
    return make_oracle_backend(
        codec=codec, resolver=SceneResolver(), patch=patch, name=f"scene-oracle-{codec}"
    )
