"""Command-line interface: edit, eval, bench-build, inspect.

Exit codes are stable across commands: 0 success, 2 validation error,
3 external-service error (chat endpoint or bridge), 4 partially completed
batch. Every run directory contains config.json with the fully resolved
configuration, so a rerun from that file reproduces the run bit-for-bit
under the oracle backend (wall-clock timing fields aside).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .backend import DenoiserBackend
from .bench import build_mock_manifest
from .bridge import BridgeBackend, BridgeError
from .chat import ChatClientConfig, ChatServiceError, HttpChatClient, MockChatClient, StructuredOutputError
from .geometry import BoundingBox, make_region_instance
from .grids import PixelImage
from .imageio import load_image, load_mask, save_image
from .metrics import MaskSet, background_metrics, judge_scores_avg, overall_score, write_s1_csv, write_scores_csv
from .oracle import make_oracle_backend
from .parsing import Decomposition, all_prompt_hashes, decompose, ground, make_echo_decompose_client, stub_decompose
from .scenes import make_scene_oracle, stub_ground
from .schedule import DEFAULT_RHO, DEFAULT_STEPS, STRATEGIES
from .session import run_edit

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SERVICE = 3
EXIT_PARTIAL = 4

# Instruction sentinel for a deliberate zero-region run.
NOOP_INSTRUCTION = "noop"


class UsageError(ValueError):
    """Bad arguments or inputs; maps to exit code 2."""


def _resolve_backend(name: str) -> DenoiserBackend:
    if name == "oracle":
        return make_scene_oracle()
    if name == "oracle-global":
        return make_oracle_backend()
    if name.startswith("bridge:"):
        url = name.split(":", 1)[1]
        if not url:
            raise UsageError("bridge backend needs a URL, e.g. bridge:http://127.0.0.1:8787")
        return BridgeBackend(url)
    raise UsageError(
        f"unknown backend {name!r}; expected oracle, oracle-global, or bridge:<url>"
    )


def _load_transcript_client(mock_dir: Path, name: str) -> MockChatClient | None:
    path = mock_dir / f"{name}.json"
    if not path.is_file():
        return None
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        replies = payload["replies"]
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad transcript file {path}: {exc}") from exc
    return MockChatClient(replies=list(replies))


def _resolved_config(args, command: str) -> dict:
    config = {
        "command": command,
        "backend": args.backend,
        "steps": args.steps,
        "rho": args.rho,
        "strategy": args.strategy,
        "seed": args.seed,
        "trace": bool(args.trace),
        "mock": args.mock,
    }
    if hasattr(args, "image"):
        config["image"] = str(Path(args.image).resolve())
    if hasattr(args, "instruction"):
        config["instruction"] = args.instruction
    return config


def _merge_config_file(args, parser_defaults: dict) -> None:
    """File values fill in only where the command line kept the default."""
    if not args.config:
        return
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        stored = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    for key in ("backend", "steps", "rho", "strategy", "seed", "trace", "mock",
                "instruction", "image"):
        if key not in stored:
            continue
        if hasattr(args, key) and getattr(args, key) == parser_defaults.get(key):
            setattr(args, key, stored[key])


def _validate_run_params(args) -> None:
    if not 0.0 <= args.rho <= 1.0:
        raise UsageError(f"rho must lie in [0, 1], got {args.rho}")
    if args.steps < 1:
        raise UsageError(f"steps must be >= 1, got {args.steps}")
    if args.strategy not in STRATEGIES:
        raise UsageError(f"strategy must be one of {STRATEGIES}, got {args.strategy!r}")


def _default_run_dir(args) -> Path:
    key = json.dumps(
        [str(args.image), args.instruction, args.backend, args.steps, args.rho,
         args.strategy, args.seed],
        sort_keys=True,
    )
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:10]
    return Path("runs") / f"edit-{digest}"


def cmd_edit(args) -> int:
    _validate_run_params(args)
    image_path = Path(args.image)
    if not image_path.is_file():
        raise UsageError(f"image not found: {image_path}")
    if not args.instruction or not args.instruction.strip():
        raise UsageError("empty instruction")
    reference = load_image(image_path)
    backend = _resolve_backend(args.backend)
    mock_dir = Path(args.mock) if args.mock and args.mock != "-" else None

    # Stage 1: parse the instruction into (referent, sub-edit) pairs.
    t0 = time.perf_counter()
    if args.instruction.strip().lower() == NOOP_INSTRUCTION:
        decomposition = None
    elif args.mock:
        client = (_load_transcript_client(mock_dir, "decompose") if mock_dir else None)
        if client is None:
            client = make_echo_decompose_client()
        decomposition = decompose(args.instruction, client, ChatClientConfig())
    elif args.offline_parser:
        decomposition = stub_decompose(args.instruction)
    else:
        client = HttpChatClient(ChatClientConfig(endpoint=args.chat_endpoint,
                                                 model=args.chat_model))
        decomposition = decompose(args.instruction, client, ChatClientConfig())
    parse_seconds = time.perf_counter() - t0

    # Stage 2: ground each referent to a pixel box.
    t0 = time.perf_counter()
    boxes: list[BoundingBox] = []
    if decomposition is not None:
        ground_client = _load_transcript_client(mock_dir, "ground") if mock_dir else None
        for refer, _ in decomposition.pairs:
            if args.mock and ground_client is None:
                boxes.append(stub_ground(reference, refer))
            elif args.mock:
                boxes.append(ground(reference, refer, ground_client, ChatClientConfig()))
            else:
                client = HttpChatClient(ChatClientConfig(endpoint=args.chat_endpoint,
                                                         model=args.chat_model))
                boxes.append(ground(reference, refer, client, ChatClientConfig()))
    detect_seconds = time.perf_counter() - t0

    descriptor = backend.descriptor()
    f, p = int(descriptor["vae_factor"]), int(descriptor["patch"])
    regions = []
    if decomposition is not None:
        for (refer, edit), box in zip(decomposition.pairs, boxes):
            regions.append(
                make_region_instance(reference, refer, edit, box, vae_factor=f, patch=p)
            )

    result = run_edit(
        reference,
        args.instruction,
        regions,
        backend,
        steps=args.steps,
        rho=args.rho,
        strategy=args.strategy,
        seed=args.seed,
        record_trace=bool(args.trace),
    )
    result.report.parse_seconds = parse_seconds
    result.report.detect_seconds = detect_seconds

    out_dir = Path(args.out) if args.out else _default_run_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    edited_path = save_image(result.image, out_dir / "edited.png")

    config = _resolved_config(args, "edit")
    config["out"] = str(out_dir.resolve())
    (out_dir / "config.json").write_text(json.dumps(config, indent=2), encoding="utf-8")

    report = result.report.to_dict()
    report["decomposition"] = (
        [{"refer": r, "edit": e} for r, e in decomposition.pairs]
        if decomposition is not None
        else []
    )
    report["parse_retries"] = decomposition.retries if decomposition is not None else 0
    report["boxes"] = [box.to_list() for box in boxes]
    report["padded_boxes"] = [r.padded_box.to_list() for r in regions]
    report["backend_descriptor"] = {k: descriptor[k] for k in sorted(descriptor)}
    report["prompt_hashes"] = all_prompt_hashes()
    (out_dir / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")

    if args.trace:
        trace_dir = out_dir / "trace"
        trace_dir.mkdir(exist_ok=True)
        entries = []
        for entry in result.trace:
            tile = backend.decode(entry.fused)
            name = f"step_{entry.index:03d}.png"
            save_image(tile, trace_dir / name)
            entries.append(
                {
                    "index": entry.index,
                    "s": entry.s,
                    "phase": entry.phase,
                    "branch_tokens": list(entry.branch_tokens),
                    "file": name,
                }
            )
        (trace_dir / "manifest.json").write_text(
            json.dumps({"entries": entries}, indent=2), encoding="utf-8"
        )

    print(f"edited image: {edited_path}")
    print(
        f"steps {result.report.steps_region} region + {result.report.steps_global} "
        f"global, K={len(regions)}, tokens region-phase "
        f"{result.report.tokens_region_phase} (global baseline "
        f"{result.report.tokens_region_phase_baseline})"
    )
    return EXIT_OK


def _masked_original(reference: PixelImage, union: np.ndarray) -> PixelImage:
    values = reference.values.copy()
    values[~union] = 0.0
    return PixelImage(values)


def cmd_eval(args) -> int:
    manifest_dir = Path(args.manifest)
    index_path = manifest_dir / "index.json"
    if not index_path.is_file():
        raise UsageError(f"no index.json under {manifest_dir}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    results_dir = Path(args.results)
    out_dir = Path(args.out) if args.out else results_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)

    judge_client = None
    if args.mock and args.mock != "-":
        judge_client = _load_transcript_client(Path(args.mock), "judge")

    s1_rows, score_rows = [], []
    skipped = []
    for item in index["samples"]:
        sample = json.loads((manifest_dir / item["path"]).read_text(encoding="utf-8"))
        sid = sample["id"]
        edited_path = results_dir / sid / "edited.png"
        if not edited_path.is_file():
            edited_path = results_dir / f"{sid}.png"
        if not edited_path.is_file():
            skipped.append({"id": sid, "reason": "edited image not found"})
            continue
        try:
            reference = load_image(manifest_dir / sample["image_path"])
            edited = load_image(edited_path)
            masks = MaskSet(
                masks=tuple(load_mask(manifest_dir / mp) for mp in sample["mask_paths"])
            )
            metric = background_metrics(reference, edited, masks)
        except (OSError, ValueError) as exc:
            skipped.append({"id": sid, "reason": str(exc)})
            continue
        document = {"id": sid, "background": metric.to_dict()}
        row = {"sample": sid, "psnr": metric.psnr, "mse": metric.mse, "ssim": metric.ssim}
        if judge_client is not None:
            union = masks.union_for(reference.height, reference.width)
            instruction = "; ".join(sample["instructions"])
            triple = judge_scores_avg(
                _masked_original(reference, union), edited, instruction,
                judge_client, ChatClientConfig(), full_original=reference, k=3,
            )
            document["scores"] = {
                "pf": triple.pf, "cons": triple.cons, "pq": triple.pq,
                "overall": overall_score(triple), "protocol": "avg@3",
            }
            score_rows.append(
                {"sample": sid, "pf": triple.pf, "cons": triple.cons,
                 "pq": triple.pq, "overall": overall_score(triple)}
            )
        s1_rows.append(row)
        (out_dir / f"{sid}.json").write_text(
            json.dumps(document, indent=2), encoding="utf-8"
        )

    write_s1_csv(out_dir / "background.csv", s1_rows)
    if score_rows:
        write_scores_csv(out_dir / "scores.csv", score_rows)
    if skipped:
        (out_dir / "skipped.json").write_text(
            json.dumps(skipped, indent=2), encoding="utf-8"
        )
    print(f"evaluated {len(s1_rows)} samples, skipped {len(skipped)}, wrote {out_dir}")
    for entry in skipped:
        print(f"  skipped {entry['id']}: {entry['reason']}")
    if skipped and not s1_rows:
        return EXIT_VALIDATION
    if skipped:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_bench_build(args) -> int:
    out_dir = Path(args.out) if args.out else Path("bench-out")
    if not args.mock:
        raise UsageError(
            "bench-build requires --mock at desk scale; real-client corpus "
            "generation needs a configured chat endpoint via --config"
        )
    build_mock_manifest(args.n, out_dir, seed=args.seed)
    config = {
        "command": "bench-build", "n": args.n, "seed": args.seed,
        "mock": args.mock, "out": str(out_dir.resolve()),
        "prompt_hashes": all_prompt_hashes(),
    }
    (out_dir / "config.json").write_text(json.dumps(config, indent=2), encoding="utf-8")
    print(f"wrote {args.n} samples under {out_dir}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "trace" / "manifest.json"
    if not manifest_path.is_file():
        raise UsageError(
            f"no trace under {run_dir}; rerun the edit with --trace (config key "
            f"\"trace\")"
        )
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    entries = manifest["entries"]
    if not entries:
        raise UsageError("trace manifest is empty")
    tiles = []
    for entry in entries:
        with Image.open(run_dir / "trace" / entry["file"]) as img:
            tiles.append((entry, img.convert("RGB").copy()))
    tile_w = max(img.width for _, img in tiles)
    tile_h = max(img.height for _, img in tiles)
    label_h = 12
    columns = min(10, len(tiles))
    rows = (len(tiles) + columns - 1) // columns
    sheet = Image.new(
        "RGB", (columns * tile_w, rows * (tile_h + label_h)), (30, 30, 30)
    )
    draw = ImageDraw.Draw(sheet)
    region_tiles = global_tiles = 0
    for i, (entry, img) in enumerate(tiles):
        col, row = i % columns, i // columns
        x, y = col * tile_w, row * (tile_h + label_h)
        sheet.paste(img, (x, y))
        label = f"s={entry['s']:.2f} {entry['phase']}"
        draw.text((x + 1, y + tile_h), label, fill=(230, 230, 230))
        if entry["phase"] == "region":
            region_tiles += 1
        else:
            global_tiles += 1
    out_path = run_dir / "contact_sheet.png"
    sheet.save(out_path, format="PNG")
    print(
        f"contact sheet: {out_path} ({len(tiles)} tiles, {region_tiles} region-phase, "
        f"{global_tiles} late/global)"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosaic",
        description=(
            "Multi-instance image editing: decompose an instruction, ground each "
            "target, denoise regions in parallel, and fuse with a pinned background."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--backend", default="oracle",
                       help="oracle | oracle-global | bridge:<url>")
        p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
        p.add_argument("--rho", type=float, default=DEFAULT_RHO)
        p.add_argument("--strategy", default="both", help="|".join(STRATEGIES))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trace", action="store_true",
                       help="record per-step decoded latents under <out>/trace")
        p.add_argument("--config", default=None,
                       help="JSON file supplying defaults for unset flags")
        p.add_argument("--mock", nargs="?", const="-", default=None,
                       help="offline mode; optional transcript directory")
        p.add_argument("--out", default=None, help="run directory")

    p_edit = sub.add_parser("edit", help="run one edit end to end")
    p_edit.add_argument("image", help="reference image (PNG)")
    p_edit.add_argument("instruction", help="compositional edit instruction")
    add_run_flags(p_edit)
    p_edit.add_argument("--offline-parser", action="store_true",
                        help="use the grammar parser instead of a chat client")
    p_edit.add_argument("--chat-endpoint",
                        default="http://localhost:8080/v1/chat/completions")
    p_edit.add_argument("--chat-model", default="default")
    p_edit.set_defaults(func=cmd_edit)

    p_eval = sub.add_parser("eval", help="score edited results against a manifest")
    p_eval.add_argument("manifest", help="benchmark manifest directory")
    p_eval.add_argument("results", help="directory of edited images")
    add_run_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench-build", help="construct a benchmark manifest")
    p_bench.add_argument("n", type=int, help="number of samples")
    add_run_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench_build)

    p_inspect = sub.add_parser("inspect", help="render a trace contact sheet")
    p_inspect.add_argument("run_dir", help="edit run directory with trace/")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {
        "backend": "oracle", "steps": DEFAULT_STEPS, "rho": DEFAULT_RHO,
        "strategy": "both", "seed": 0, "trace": False, "mock": None,
        "instruction": None, "image": None,
    }
    try:
        if getattr(args, "config", None):
            _merge_config_file(args, defaults)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ChatServiceError, BridgeError, StructuredOutputError) as exc:
        stage = type(exc).__name__
        print(f"error ({stage}): {exc}", file=sys.stderr)
        last = getattr(exc, "last_output", None)
        if last:
            print(f"last model output: {last[:500]}", file=sys.stderr)
        return EXIT_SERVICE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
