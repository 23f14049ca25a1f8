"""Instruction decomposition and grounding.

Two parallel paths produce the same shapes: `decompose`/`ground` drive a
chat client through strict structured output with the repair ladder, while
`stub_decompose` and the scene-side stub grounder are pure offline
functions over a mini-grammar, used for tests and mock mode. The echo
client bridges them: it answers a decomposition prompt by running the stub
grammar on the embedded instruction, so the full client path can be
exercised offline and compared against the stub for exact agreement.

Prompts are versioned text assets; their hashes are pinned by tests so any
behavioral change to a prompt is a deliberate, reviewed edit.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .chat import (
    ChatClient,
    ChatClientConfig,
    MockChatClient,
    StructuredResult,
    parse_json_reply,
    run_structured,
)
from .geometry import BoundingBox
from .grids import PixelImage

__all__ = [
    "Decomposition",
    "decompose",
    "ground",
    "stub_decompose",
    "pairs_to_instruction",
    "make_echo_decompose_client",
    "prompt_text",
    "prompt_hash",
    "all_prompt_hashes",
    "PROMPT_FILES",
    "DECOMPOSE_SCHEMA",
    "GROUND_SCHEMA",
]

PROMPT_FILES = (
    "decompose_v1.txt",
    "ground_v1.txt",
    "judge_pf_v1.txt",
    "judge_cons_v1.txt",
    "judge_pq_v1.txt",
    "bench_pair_v1.txt",
    "bench_dedup_v1.txt",
    "bench_description_v1.txt",
    "bench_judge_description_v1.txt",
    "bench_instructions_v1.txt",
)

_prompt_cache: dict[str, str] = {}


def prompt_text(name: str) -> str:
    """Load a prompt asset by file name (cached)."""
    if name not in _prompt_cache:
        if name not in PROMPT_FILES:
            raise KeyError(f"unknown prompt asset {name!r}")
        _prompt_cache[name] = (
            resources.files("mosaic.prompts").joinpath(name).read_text(encoding="utf-8")
        )
    return _prompt_cache[name]


def prompt_hash(name: str) -> str:
    return hashlib.sha256(prompt_text(name).encode("utf-8")).hexdigest()


def all_prompt_hashes() -> dict[str, str]:
    return {name: prompt_hash(name) for name in PROMPT_FILES}


@dataclass(frozen=True)
class Decomposition:
    """Ordered (referring expression, sub-instruction) pairs for one edit."""

    pairs: tuple[tuple[str, str], ...]
    retries: int = 0

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("decomposition must contain at least one pair")
        for i, (refer, edit) in enumerate(self.pairs):
            if not refer.strip():
                raise ValueError(f"pair {i}: empty referring expression")
            if not edit.strip():
                raise ValueError(f"pair {i}: empty sub-instruction")

    @property
    def k(self) -> int:
        return len(self.pairs)

    def referents(self) -> tuple[str, ...]:
        return tuple(refer for refer, _ in self.pairs)


# Mini-grammar referring expressions: "the <side> <noun>" or
# "the <ordinal> <noun> from the <left|right>".
_REFERENT_RE = re.compile(
    r"\bthe\s+(?:"
    r"(?:leftmost|rightmost|middle|center)\s+[A-Za-z]\w*"
    r"|"
    r"(?:first|second|third|fourth|fifth)\s+[A-Za-z]\w*\s+from\s+the\s+(?:left|right)"
    r")\b",
    re.IGNORECASE,
)

_WS_RE = re.compile(r"\s+")


def stub_decompose(instruction: str) -> Decomposition:
    """Deterministic offline parser over the mini-grammar.

    Clauses are split on ';'. Each clause must contain exactly one
    referring expression of the grammar; the sub-instruction is the clause
    with that span removed, lowercased and whitespace-normalized. The
    referring expression keeps its original spelling (verbatim span copy).
    """
    if not instruction or not instruction.strip():
        raise ValueError("empty instruction")
    pairs = []
    for index, clause in enumerate(instruction.split(";")):
        clause = clause.strip()
        if not clause:
            raise ValueError(f"clause {index}: empty clause")
        match = _REFERENT_RE.search(clause)
        if match is None:
            raise ValueError(
                f"clause {index}: no referring expression of the form "
                f"'the <side> <noun>' or 'the <ordinal> <noun> from the "
                f"<left|right>' in {clause!r}"
            )
        refer = match.group(0)
        remainder = clause[: match.start()] + " " + clause[match.end():]
        edit = _WS_RE.sub(" ", remainder).strip().lower()
        if not edit:
            raise ValueError(f"clause {index}: no edit around the referent in {clause!r}")
        pairs.append((refer, edit))
    return Decomposition(pairs=tuple(pairs))


def pairs_to_instruction(decomposition: Decomposition) -> str:
    """Serialize pairs back into a grammar instruction (stub round trip)."""
    return "; ".join(f"{edit} {refer}" for refer, edit in decomposition.pairs)


DECOMPOSE_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "required": ["refer", "edit"],
        "properties": {
            "refer": {"type": "string", "minLength": 1},
            "edit": {"type": "string", "minLength": 1},
        },
    },
}

GROUND_SCHEMA = {
    "type": "object",
    "required": ["x0", "y0", "x1", "y1"],
    "properties": {
        "x0": {"type": "number"},
        "y0": {"type": "number"},
        "x1": {"type": "number"},
        "y1": {"type": "number"},
    },
}


def _schema_check(value, schema) -> None:
    try:
        jsonschema.validate(value, schema)
    except jsonschema.ValidationError as exc:
        raise ValueError(f"schema violation: {exc.message}") from exc


def _decompose_validator(instruction: str):
    def validate(raw: str) -> tuple[tuple[str, str], ...]:
        value = parse_json_reply(raw)
        _schema_check(value, DECOMPOSE_SCHEMA)
        pairs = []
        for i, item in enumerate(value):
            refer, edit = item["refer"], item["edit"]
            if refer not in instruction:
                raise ValueError(
                    f"pair {i}: referring expression {refer!r} is not a "
                    f"verbatim substring of the instruction"
                )
            pairs.append((refer, edit))
        return tuple(pairs)

    return validate


def decompose(
    instruction: str,
    client: ChatClient,
    config: ChatClientConfig | None = None,
) -> Decomposition:
    """Split a compositional instruction into (referent, sub-edit) pairs."""
    if not instruction or not instruction.strip():
        raise ValueError("empty instruction")
    config = config or ChatClientConfig()
    prompt = prompt_text("decompose_v1.txt").replace("{instruction}", instruction)
    schema_text = json.dumps(DECOMPOSE_SCHEMA, indent=2)
    result = run_structured(
        client, prompt, _decompose_validator(instruction), config, schema_text
    )
    return Decomposition(pairs=result.value, retries=result.retry_count)


_CLAMP_TOLERANCE_PX = 2


def _ground_validator(width: int, height: int):
    def validate(raw: str) -> BoundingBox:
        value = parse_json_reply(raw)
        _schema_check(value, GROUND_SCHEMA)
        coords = {}
        for key in ("x0", "y0", "x1", "y1"):
            v = value[key]
            if isinstance(v, bool):
                raise ValueError(f"{key} must be a number, got a boolean")
            coords[key] = float(v)
        if all(0.0 <= v <= 1.0 for v in coords.values()):
            warnings.warn(
                "grounding reply used normalized coordinates; rescaling to "
                "absolute pixels",
                stacklevel=2,
            )
            coords["x0"] *= width
            coords["x1"] *= width
            coords["y0"] *= height
            coords["y1"] *= height
        out = {k: int(round(v)) for k, v in coords.items()}
        for key, limit in (("x0", width), ("x1", width), ("y0", height), ("y1", height)):
            v = out[key]
            if v < 0:
                if v < -_CLAMP_TOLERANCE_PX:
                    raise ValueError(f"{key}={v} out of bounds beyond the clamp tolerance")
                warnings.warn(f"grounding {key}={v} clamped to 0", stacklevel=2)
                out[key] = 0
            elif v > limit:
                if v > limit + _CLAMP_TOLERANCE_PX:
                    raise ValueError(
                        f"{key}={v} exceeds image extent {limit} beyond the clamp tolerance"
                    )
                warnings.warn(f"grounding {key}={v} clamped to {limit}", stacklevel=2)
                out[key] = limit
        if out["x1"] <= out["x0"] or out["y1"] <= out["y0"]:
            raise ValueError(
                f"degenerate or inverted box ({out['x0']}, {out['y0']}, "
                f"{out['x1']}, {out['y1']})"
            )
        return BoundingBox(out["x0"], out["y0"], out["x1"], out["y1"])

    return validate


def ground(
    image: PixelImage | tuple[int, int],
    expression: str,
    client: ChatClient,
    config: ChatClientConfig | None = None,
) -> BoundingBox:
    """Locate the instance named by a referring expression as a pixel box.

    ``image`` may be the image itself or a (width, height) pair; only the
    dimensions are used for the prompt and for bounds checking. Coordinates
    come back as absolute half-open integer pixels; an all-normalized reply
    is rescaled with a warning, and boxes overshooting the canvas by at
    most 2 px are clamped.
    """
    if not expression or not expression.strip():
        raise ValueError("empty referring expression")
    if isinstance(image, PixelImage):
        width, height = image.width, image.height
    else:
        width, height = image
    config = config or ChatClientConfig()
    prompt = (
        prompt_text("ground_v1.txt")
        .replace("{width}", str(width))
        .replace("{height}", str(height))
        .replace("{expression}", expression)
    )
    schema_text = json.dumps(GROUND_SCHEMA, indent=2)
    result: StructuredResult = run_structured(
        client, prompt, _ground_validator(width, height), config, schema_text
    )
    return result.value


_EMBEDDED_INSTRUCTION_RE = re.compile(r"<<<(.*?)>>>", re.DOTALL)


def make_echo_decompose_client() -> MockChatClient:
    """A mock client that answers decomposition prompts via the stub grammar.

    It extracts the instruction embedded in the prompt, runs
    stub_decompose, and emits the strict JSON the schema expects, so the
    full structured-output path runs offline and must agree with the stub.
    """

    def reply(prompt: str) -> str:
        match = _EMBEDDED_INSTRUCTION_RE.search(prompt)
        if match is None:
            return "[]"
        decomposition = stub_decompose(match.group(1))
        return json.dumps(
            [{"refer": r, "edit": e} for r, e in decomposition.pairs]
        )

    return MockChatClient(reply_fn=reply)
