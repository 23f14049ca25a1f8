"""Benchmark construction: slot plans, dedup, descriptions, manifests.

A sample is built in three stages: (category, scene) pair generation with
judge-backed deduplication, description drafting with up to four judged
refinement rounds, and instruction writing with left-to-right binding of
the first instance_count instructions to the repeated instances. Reference
images at desk scale come from the synthetic scene tool, so every target
box and mask in the manifest is ground truth by construction.

Instance counts follow the corpus mix policy: half the samples carry 3
repeated instances, a quarter 4, a quarter 5, realized deterministically by
cycling (3, 4, 5, 3).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chat import ChatClient, ChatClientConfig, StructuredOutputError, parse_json_reply, run_structured
from .geometry import BoundingBox
from .imageio import save_image, save_mask
from .parsing import all_prompt_hashes, prompt_text
from .scenes import SceneObject, SyntheticScene, resolve_position

__all__ = [
    "SlotPlan",
    "DedupVerdict",
    "REGENERATE",
    "Regenerate",
    "EDIT_TYPES",
    "INSTANCE_COUNT_CYCLE",
    "instance_count_for",
    "bench_generate_pairs",
    "bench_generate_description",
    "bench_generate_instructions",
    "make_bench_scene",
    "mock_sample",
    "build_mock_manifest",
]

EDIT_TYPES = (
    "addition",
    "removal",
    "replacement",
    "color modification",
    "material modification",
)

# 50% threes, 25% fours, 25% fives, deterministic at any corpus size.
INSTANCE_COUNT_CYCLE = (3, 4, 5, 3)

MAX_DESCRIPTION_ROUNDS = 4

_COLOR_NAMES = {
    (0.2, 0.4, 0.8): "blue",
    (0.8, 0.7, 0.2): "yellow",
    (0.3, 0.8, 0.4): "green",
    (0.8, 0.3, 0.6): "pink",
    (0.2, 0.7, 0.7): "teal",
    (0.55, 0.35, 0.2): "brown",
    (0.7, 0.5, 0.9): "violet",
}

_INSTANCE_PALETTE = (
    (0.2, 0.4, 0.8),
    (0.8, 0.7, 0.2),
    (0.3, 0.8, 0.4),
    (0.8, 0.3, 0.6),
    (0.2, 0.7, 0.7),
)

_EXTRA_PALETTE = ((0.55, 0.35, 0.2), (0.7, 0.5, 0.9))

_MOCK_CATEGORIES = ("cat", "lamp", "cup", "boat", "tree", "drum", "fox", "vase")


def instance_count_for(index: int) -> int:
    return INSTANCE_COUNT_CYCLE[index % len(INSTANCE_COUNT_CYCLE)]


class Regenerate:
    """Sentinel: description failed all refinement rounds; redo stage one."""

    def __repr__(self):
        return "REGENERATE"


REGENERATE = Regenerate()


@dataclass(frozen=True)
class SlotPlan:
    """Layout plan for one sample's editable targets."""

    repeated_category: str
    instance_count: int
    ordered_instances: tuple[str, ...]
    extra_targets: tuple[str, ...] = ()

    def __post_init__(self):
        if self.instance_count not in (3, 4, 5):
            raise ValueError(f"instance_count must be 3, 4, or 5, got {self.instance_count}")
        if len(self.ordered_instances) != self.instance_count:
            raise ValueError(
                f"ordered_instances length {len(self.ordered_instances)} != "
                f"instance_count {self.instance_count}"
            )
        if len(self.extra_targets) > 2:
            raise ValueError(f"at most 2 extra targets, got {len(self.extra_targets)}")


@dataclass(frozen=True)
class DedupVerdict:
    candidate_id: str
    duplicate_of: str | None
    decision: str

    def __post_init__(self):
        if self.decision not in ("keep", "regenerate"):
            raise ValueError(f"decision must be keep or regenerate, got {self.decision!r}")
        if (self.duplicate_of is not None) != (self.decision == "regenerate"):
            raise ValueError("duplicate_of must be present iff decision is regenerate")


def _dedup_validator(candidate_id: str):
    def validate(raw: str) -> DedupVerdict:
        value = parse_json_reply(raw)
        if not isinstance(value, dict) or "decision" not in value:
            raise ValueError("dedup verdict must be an object with a 'decision' key")
        return DedupVerdict(
            candidate_id=candidate_id,
            duplicate_of=value.get("duplicate_of"),
            decision=value["decision"],
        )

    return validate


def _pair_validator(raw: str) -> tuple[str, str]:
    value = parse_json_reply(raw)
    if not isinstance(value, dict):
        raise ValueError("pair reply must be a JSON object")
    category, scene = value.get("category"), value.get("scene")
    if not isinstance(category, str) or not category.strip():
        raise ValueError("missing or empty 'category'")
    if not isinstance(scene, str) or not scene.strip():
        raise ValueError("missing or empty 'scene'")
    return (category.strip(), scene.strip())


def bench_generate_pairs(
    n: int,
    client: ChatClient,
    judge_client: ChatClient,
    config: ChatClientConfig | None = None,
) -> list[tuple[str, str]]:
    """Collect n unique (category, scene) pairs, resampling duplicates.

    Exact textual duplicates are discarded without consulting the judge;
    everything else goes through the dedup judge. Each slot has its own
    resample budget of max_retries + 1 attempts with the escalation ladder,
    and sampling returns to defaults once the slot is filled.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    config = config or ChatClientConfig()
    accepted: list[tuple[str, str]] = []
    for slot in range(n):
        filled = False
        for attempt in range(config.max_retries + 1):
            temperature, top_p = config.sampling_for_attempt(attempt)
            used = "\n".join(f"- {c} | {s}" for c, s in accepted) or "(none)"
            prompt = prompt_text("bench_pair_v1.txt").replace("{used_pairs}", used)
            raw = client.complete(
                prompt, temperature=temperature, top_p=top_p,
                max_tokens=config.max_tokens,
            )
            try:
                pair = _pair_validator(raw)
            except ValueError:
                continue
            if any(
                pair[0].lower() == c.lower() and pair[1].lower() == s.lower()
                for c, s in accepted
            ):
                continue
            candidate_id = f"slot{slot}"
            existing = "\n".join(
                f"- pair{i}: {c} | {s}" for i, (c, s) in enumerate(accepted)
            ) or "(none)"
            judge_prompt = (
                prompt_text("bench_dedup_v1.txt")
                .replace("{candidate}", f"{pair[0]} | {pair[1]}")
                .replace("{existing}", existing)
            )
            verdict = run_structured(
                judge_client, judge_prompt, _dedup_validator(candidate_id), config
            ).value
            if verdict.decision == "keep":
                accepted.append(pair)
                filled = True
                break
        if not filled:
            raise StructuredOutputError(
                f"pair slot {slot} exhausted its resample budget of "
                f"{config.max_retries + 1} attempts",
                last_output=None,
                attempts=config.max_retries + 1,
            )
    return accepted


def _description_validator(raw: str) -> str:
    value = parse_json_reply(raw)
    if not isinstance(value, dict) or not isinstance(value.get("description"), str):
        raise ValueError("reply must be an object with a string 'description'")
    text = value["description"].strip()
    if not text:
        raise ValueError("empty description")
    return text


def _description_judge_validator(raw: str) -> tuple[bool, str]:
    value = parse_json_reply(raw)
    if not isinstance(value, dict) or not isinstance(value.get("pass"), bool):
        raise ValueError("judge reply must be an object with a boolean 'pass'")
    return (value["pass"], str(value.get("feedback", "")))


def bench_generate_description(
    pair: tuple[str, str],
    instance_count: int,
    client: ChatClient,
    judge_client: ChatClient,
    config: ChatClientConfig | None = None,
    existing: list[str] | None = None,
    transcript: list | None = None,
) -> str | Regenerate:
    """Draft a scene description and refine it until the judge passes.

    At most MAX_DESCRIPTION_ROUNDS generate-judge rounds run; judge feedback
    from a failed round is quoted into the next draft prompt. A sample that
    fails every round returns the REGENERATE sentinel instead of raising,
    since redoing stage one is part of the normal control flow.
    """
    config = config or ChatClientConfig()
    category, scene = pair
    existing_block = "\n".join(f"- {d}" for d in (existing or [])) or "(none)"
    feedback = ""
    for round_index in range(MAX_DESCRIPTION_ROUNDS):
        feedback_block = (
            f"Feedback on your previous draft, fix this first:\n{feedback}"
            if feedback
            else ""
        )
        prompt = (
            prompt_text("bench_description_v1.txt")
            .replace("{category}", category)
            .replace("{scene}", scene)
            .replace("{count}", str(instance_count))
            .replace("{feedback_block}", feedback_block)
        )
        description = run_structured(
            client, prompt, _description_validator, config
        ).value
        judge_prompt = (
            prompt_text("bench_judge_description_v1.txt")
            .replace("{category}", category)
            .replace("{scene}", scene)
            .replace("{count}", str(instance_count))
            .replace("{description}", description)
            .replace("{existing}", existing_block)
        )
        passed, feedback = run_structured(
            judge_client, judge_prompt, _description_judge_validator, config
        ).value
        if transcript is not None:
            transcript.append(
                {"round": round_index, "description": description,
                 "pass": passed, "feedback": feedback}
            )
        if passed:
            return description
    return REGENERATE


def _instructions_validator(instance_count: int):
    def validate(raw: str) -> tuple[tuple[str, str, str], ...]:
        value = parse_json_reply(raw)
        if not isinstance(value, list) or len(value) != 5:
            got = len(value) if isinstance(value, list) else type(value).__name__
            raise ValueError(f"expected a JSON array of exactly 5 objects, got {got}")
        out = []
        for i, item in enumerate(value):
            if not isinstance(item, dict):
                raise ValueError(f"entry {i} is not an object")
            instruction = item.get("instruction")
            refer = item.get("refer")
            edit_type = item.get("edit_type")
            if not isinstance(instruction, str) or not instruction.strip():
                raise ValueError(f"entry {i}: missing instruction")
            if not isinstance(refer, str) or not refer.strip():
                raise ValueError(f"entry {i}: missing refer")
            if edit_type not in EDIT_TYPES:
                raise ValueError(
                    f"entry {i}: edit_type {edit_type!r} not one of {EDIT_TYPES}"
                )
            if refer not in instruction:
                raise ValueError(
                    f"entry {i}: refer {refer!r} is not a verbatim substring of "
                    f"its instruction"
                )
            if i < instance_count:
                try:
                    position = resolve_position(refer, instance_count)
                except ValueError as exc:
                    raise ValueError(f"entry {i}: unbindable referent: {exc}") from exc
                if position != i:
                    raise ValueError(
                        f"entry {i}: referent {refer!r} binds to position "
                        f"{position}, expected {i} (left-to-right order)"
                    )
            out.append((instruction, refer, edit_type))
        return tuple(out)

    return validate


def bench_generate_instructions(
    slot_plan: SlotPlan,
    description: str,
    client: ChatClient,
    config: ChatClientConfig | None = None,
) -> tuple[tuple[str, str, str], ...]:
    """Write exactly 5 instructions bound to the plan's targets.

    Returns (instruction, referent, edit_type) triples; the first
    instance_count referents are validated to bind left to right.
    """
    config = config or ChatClientConfig()
    extras = ", ".join(slot_plan.extra_targets) or "(none)"
    prompt = (
        prompt_text("bench_instructions_v1.txt")
        .replace("{description}", description)
        .replace("{count}", str(slot_plan.instance_count))
        .replace("{category}", slot_plan.repeated_category)
        .replace("{extras}", extras)
    )
    result = run_structured(
        client, prompt, _instructions_validator(slot_plan.instance_count), config
    )
    return result.value


def make_bench_scene(
    category: str,
    instance_count: int,
    extra_count: int,
    width: int = 96,
    height: int = 64,
) -> tuple[SyntheticScene, list[BoundingBox], list[BoundingBox]]:
    """Render-ready scene: a row of repeated instances plus extra blocks.

    Returns (scene, instance_boxes_left_to_right, extra_boxes). Extra
    targets sit in a second row below the instances so every target of the
    five instructions has ground-truth geometry.
    """
    side = 12
    gap = (width - instance_count * side) // (instance_count + 1)
    y0 = 20
    objects = []
    instance_boxes = []
    for i in range(instance_count):
        x0 = gap + i * (side + gap)
        box = BoundingBox(x0, y0, x0 + side, y0 + side)
        objects.append(SceneObject(noun=category, color=_INSTANCE_PALETTE[i], box=box))
        instance_boxes.append(box)
    extra_boxes = []
    if extra_count:
        eside = 10
        egap = (width - extra_count * eside) // (extra_count + 1)
        ey0 = 44
        for j in range(extra_count):
            ex0 = egap + j * (eside + egap)
            box = BoundingBox(ex0, ey0, ex0 + eside, ey0 + eside)
            objects.append(SceneObject(noun="block", color=_EXTRA_PALETTE[j], box=box))
            extra_boxes.append(box)
    scene = SyntheticScene(
        width=width, height=height, background=(0.5, 0.5, 0.5), objects=tuple(objects)
    )
    return scene, instance_boxes, extra_boxes


def _ordinal_referent(index: int, count: int, noun: str) -> str:
    if index == 0:
        return f"the leftmost {noun}"
    if index == count - 1:
        return f"the rightmost {noun}"
    ordinal = ("first", "second", "third", "fourth", "fifth")[index]
    return f"the {ordinal} {noun} from the left"


# Additions are not expressible in the toy edit grammar, so the mock cycle
# leads with the four toy-runnable types and leaves addition for slot 5.
_MOCK_EDIT_CYCLE = (
    "color modification",
    "removal",
    "replacement",
    "material modification",
    "addition",
)


def _mock_instruction(index: int, referent: str) -> tuple[str, str]:
    """Deterministic instruction text + edit type for mock manifests."""
    kind = _MOCK_EDIT_CYCLE[index % len(_MOCK_EDIT_CYCLE)]
    if kind == "color modification":
        return f"set_color {referent} to (0.9, 0.1, 0.1)", kind
    if kind == "removal":
        return f"remove {referent}", kind
    if kind == "replacement":
        return f"replace {referent} with pattern checker", kind
    if kind == "material modification":
        return f"replace {referent} with pattern stripes", kind
    return f"add a small white marker to {referent}", kind


def mock_sample(index: int) -> dict:
    """Build one fully deterministic sample (no clients, no files)."""
    count = instance_count_for(index)
    extra_count = 5 - count
    category = _MOCK_CATEGORIES[index % len(_MOCK_CATEGORIES)]
    scene, instance_boxes, extra_boxes = make_bench_scene(category, count, extra_count)
    colors = [_COLOR_NAMES[_INSTANCE_PALETTE[i]] for i in range(count)]
    description = (
        f"A flat gray field with {count} {category} tiles in a horizontal row; "
        f"left to right they are {', '.join(colors)}."
    )
    if extra_count:
        extra_colors = [_COLOR_NAMES[_EXTRA_PALETTE[j]] for j in range(extra_count)]
        description += (
            f" Below the row, {extra_count} smaller block"
            f"{'s' if extra_count > 1 else ''} in {', '.join(extra_colors)}."
        )
    referents = [_ordinal_referent(i, count, category) for i in range(count)]
    referents += [_ordinal_referent(j, extra_count, "block") for j in range(extra_count)]
    boxes = instance_boxes + extra_boxes
    instructions, edit_types = [], []
    for i, referent in enumerate(referents):
        text, kind = _mock_instruction(i, referent)
        instructions.append(text)
        edit_types.append(kind)
    return {
        "id": f"sample_{index:03d}",
        "pair": {"category": category, "scene": "a row of tiles on a gray field"},
        "instance_count": count,
        "description": description,
        "scene": scene,
        "instructions": instructions,
        "referents": referents,
        "edit_types": edit_types,
        "boxes": boxes,
    }


def build_mock_manifest(n: int, out_dir: str | Path, seed: int = 0) -> Path:
    """Write a deterministic n-sample benchmark layout to out_dir.

    Layout: images/<id>.png, masks/<id>_t<j>.png, samples/<id>.json, plus
    an index.json listing every sample document. The seed is recorded for
    provenance; mock content is seed-independent by design.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    hashes = all_prompt_hashes()
    index = []
    for i in range(n):
        sample = mock_sample(i)
        sid = sample["id"]
        image = sample["scene"].render()
        image_path = out_dir / "images" / f"{sid}.png"
        save_image(image, image_path)
        mask_paths = []
        for j, box in enumerate(sample["boxes"]):
            bits = np.zeros((image.height, image.width), dtype=bool)
            bits[box.y0 : box.y1, box.x0 : box.x1] = True
            mask_path = out_dir / "masks" / f"{sid}_t{j}.png"
            save_mask(bits, mask_path)
            mask_paths.append(str(mask_path.relative_to(out_dir)))
        document = {
            "id": sid,
            "pair": sample["pair"],
            "instance_count": sample["instance_count"],
            "description": sample["description"],
            "image_path": str(image_path.relative_to(out_dir)),
            "instructions": sample["instructions"],
            "referents": sample["referents"],
            "edit_types": sample["edit_types"],
            "boxes": [box.to_list() for box in sample["boxes"]],
            "mask_paths": mask_paths,
            "keep": "pending",
            "provenance": {
                "seed": seed,
                "retries": {"pairs": 0, "description": 0, "instructions": 0},
                "rounds": 0,
                "prompt_hashes": hashes,
            },
        }
        with open(out_dir / "samples" / f"{sid}.json", "w", encoding="utf-8") as fh:
            json.dump(document, fh, indent=2)
        index.append({"id": sid, "path": f"samples/{sid}.json"})
    with open(out_dir / "index.json", "w", encoding="utf-8") as fh:
        json.dump({"samples": index, "count": n}, fh, indent=2)
    return out_dir
