"""Analytic oracle backend over a tiny edit grammar.

The oracle resolves a condition to a target image and reports the velocity
of the exact linear path from the current latent to that target, so Euler
integration of a full schedule lands on the target up to rounding. This
gives the engine a denoiser whose end state is checkable in closed form.

Grammar (clauses joined by ";"):

    set_color [the <noun...>] to (r, g, b)
    remove [the <noun...>]
    replace [the <noun...>] with pattern <checker|stripes>
    noop

`resolve_target` models a coarse global editor: it applies the FIRST clause
of a composite to the full canvas and ignores region nouns (region scoping
is the engine's job, via crops). That deliberate weakness is the desk-scale
analogue of single-pass models under-editing compositional instructions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backend import Condition
from .grids import LatentGrid, PixelImage

__all__ = [
    "SIGMA_MIN",
    "TOY_OP_KINDS",
    "ToyEditOp",
    "parse_toy_instruction",
    "apply_toy_op",
    "resolve_target",
    "grammar_resolver",
    "IdentityCodec",
    "PoolingCodec",
    "OracleBackend",
    "make_oracle_backend",
]

SIGMA_MIN = 1e-6

TOY_OP_KINDS = ("set_color", "remove", "replace_with_constant_pattern", "noop")

_SET_COLOR_RE = re.compile(
    r"^set_color(?:\s+the\s+(?P<noun>.+?))?\s+to\s+\((?P<vals>[^)]*)\)$"
)
_REMOVE_RE = re.compile(r"^remove(?:\s+the\s+(?P<noun>.+))?$")
_REPLACE_RE = re.compile(
    r"^replace(?:\s+the\s+(?P<noun>.+?))?\s+with\s+pattern\s+(?P<pattern>\w+)$"
)


@dataclass(frozen=True)
class ToyEditOp:
    """One parsed clause of the toy grammar."""

    kind: str
    noun: str | None = None
    color: tuple[float, float, float] | None = None
    pattern: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in TOY_OP_KINDS:
            raise ValueError(f"unknown toy op kind {self.kind!r}")


def _parse_color(raw: str, clause: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ValueError(f"set_color needs an (r, g, b) triple in {clause!r}")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ValueError(f"bad color component in {clause!r}") from exc
    if any(not 0.0 <= v <= 1.0 for v in vals):
        raise ValueError(f"color components must lie in [0, 1] in {clause!r}")
    return vals  # type: ignore[return-value]


def _pattern_canvas(name: str, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    if name == "checker":
        light = ((yy // 2 + xx // 2) % 2).astype(np.float64)
        plane = 0.25 + 0.5 * light
    elif name == "stripes":
        plane = 0.2 + 0.6 * ((yy // 2) % 2).astype(np.float64)
    else:
        raise ValueError(f"unknown constant pattern {name!r}")
    return np.repeat(plane[:, :, None], 3, axis=2)


def parse_toy_instruction(text: str) -> list[ToyEditOp]:
    """Split on ';' and parse each clause; raises ValueError on any failure."""
    clauses = [c.strip() for c in text.split(";")]
    if not any(clauses):
        raise ValueError("empty toy instruction")
    ops: list[ToyEditOp] = []
    for clause in clauses:
        if not clause:
            raise ValueError(f"empty clause in toy instruction {text!r}")
        lowered = clause.lower()
        if lowered == "noop":
            ops.append(ToyEditOp(kind="noop"))
            continue
        m = _SET_COLOR_RE.match(lowered)
        if m:
            ops.append(
                ToyEditOp(
                    kind="set_color",
                    noun=m.group("noun"),
                    color=_parse_color(m.group("vals"), clause),
                )
            )
            continue
        m = _REMOVE_RE.match(lowered)
        if m:
            ops.append(ToyEditOp(kind="remove", noun=m.group("noun")))
            continue
        m = _REPLACE_RE.match(lowered)
        if m:
            name = m.group("pattern")
            _pattern_canvas(name, 2, 2)  # validate the pattern id eagerly
            ops.append(
                ToyEditOp(
                    kind="replace_with_constant_pattern",
                    noun=m.group("noun"),
                    pattern=name,
                )
            )
            continue
        raise ValueError(f"clause does not parse under the toy grammar: {clause!r}")
    return ops


def apply_toy_op(base: PixelImage, op: ToyEditOp) -> PixelImage:
    """Apply one op to the full canvas of `base`."""
    if op.kind == "noop":
        return PixelImage(base.values)
    if op.kind == "set_color":
        out = np.empty_like(base.values)
        out[:, :, :] = np.asarray(op.color, dtype=np.float64)
        return PixelImage(out)
    if op.kind == "remove":
        # Surround-mean fill: the mean color of the 1-px border ring stands in
        # for inpainted background.
        v = base.values
        ring = np.concatenate(
            [
                v[0, :, :],
                v[-1, :, :],
                v[1:-1, 0, :] if v.shape[0] > 2 else v[:0, 0, :],
                v[1:-1, -1, :] if v.shape[0] > 2 else v[:0, 0, :],
            ]
        )
        fill = ring.mean(axis=0)
        out = np.empty_like(v)
        out[:, :, :] = fill
        return PixelImage(out)
    if op.kind == "replace_with_constant_pattern":
        return PixelImage(_pattern_canvas(op.pattern, base.height, base.width))
    raise ValueError(f"unhandled op kind {op.kind!r}")


def resolve_target(condition: Condition, base: PixelImage | None = None) -> PixelImage:
    """Coarse global resolution: first clause only, applied to the full canvas.

    Region nouns are ignored here; exact multi-clause regional fidelity is
    what the fusion engine adds on top.
    """
    ops = parse_toy_instruction(condition.instruction)
    return apply_toy_op(base if base is not None else condition.image, ops[0])


def grammar_resolver(condition: Condition) -> PixelImage:
    """The weak single-clause resolver as a backend-pluggable callable."""
    return resolve_target(condition)


class IdentityCodec:
    """f=1 codec: latent is the image itself, channel-first."""

    factor = 1

    def encode(self, image: PixelImage) -> LatentGrid:
        return LatentGrid(np.ascontiguousarray(image.values.transpose(2, 0, 1)))

    def decode(self, latent: LatentGrid) -> PixelImage:
        return PixelImage(
            np.clip(latent.values.transpose(1, 2, 0), 0.0, 1.0)
        )


class PoolingCodec:
    """f=2 codec: 2x2 mean-pool encode, nearest-neighbor decode."""

    factor = 2

    def encode(self, image: PixelImage) -> LatentGrid:
        h, w = image.height, image.width
        if h % 2 or w % 2:
            raise ValueError(f"pooling codec needs even dims, got {w}x{h}")
        chw = image.values.transpose(2, 0, 1)
        pooled = chw.reshape(3, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
        return LatentGrid(pooled)

    def decode(self, latent: LatentGrid) -> PixelImage:
        up = np.repeat(np.repeat(latent.values, 2, axis=1), 2, axis=2)
        return PixelImage(np.clip(up.transpose(1, 2, 0), 0.0, 1.0))


class OracleBackend:
    """Denoiser whose velocity always points along the exact path to a target.

    velocity = (z - encode(target(condition))) / max(s, SIGMA_MIN)

    From any state, integrating the remaining schedule reproduces the target
    at s=0 (the per-step factors telescope and the final step lands exactly).
    """

    def __init__(
        self,
        resolver: Callable[[Condition], PixelImage] | None = None,
        codec=None,
        patch: int = 1,
        name: str = "toy-oracle",
        sigma_min: float = SIGMA_MIN,
    ) -> None:
        self.resolver = resolver if resolver is not None else grammar_resolver
        self.codec = codec if codec is not None else IdentityCodec()
        if patch < 1:
            raise ValueError(f"patch must be positive, got {patch}")
        self.patch = patch
        self.name = name
        self.sigma_min = sigma_min

    def predict_velocity(
        self, latent: LatentGrid, s: float, condition: Condition
    ) -> LatentGrid:
        target = self.encode(self.resolver(condition))
        if target.shape != latent.shape:
            raise ValueError(
                f"resolved target shape {target.shape} does not match latent "
                f"{latent.shape} (condition image {condition.image.width}x"
                f"{condition.image.height})"
            )
        return LatentGrid((latent.values - target.values) / max(s, self.sigma_min))

    def encode(self, image: PixelImage) -> LatentGrid:
        return self.codec.encode(image)

    def decode(self, latent: LatentGrid) -> PixelImage:
        return self.codec.decode(latent)

    def descriptor(self) -> dict:
        return {
            "vae_factor": self.codec.factor,
            "patch": self.patch,
            "name": self.name,
        }


def make_oracle_backend(
    codec: str = "identity",
    resolver: Callable[[Condition], PixelImage] | None = None,
    patch: int = 1,
    name: str | None = None,
) -> OracleBackend:
    """Convenience constructor for the two toy codecs."""
    if codec == "identity":
        chosen = IdentityCodec()
    elif codec == "pooling":
        chosen = PoolingCodec()
    else:
        raise ValueError(f"unknown codec {codec!r}, expected identity or pooling")
    return OracleBackend(
        resolver=resolver,
        codec=chosen,
        patch=patch,
        name=name if name is not None else f"toy-oracle-{codec}",
    )
