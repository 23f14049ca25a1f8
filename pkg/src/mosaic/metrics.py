"""Masked background-preservation metrics and judge-score aggregation.

Pixel metrics are computed only where no ground-truth target mask covers
the image: MSE and PSNR over background pixels and channels, SSIM on the
luma channel with a uniform 8x8 window evaluated only at windows that lie
fully inside the background. Neural similarity columns (structure distance,
LPIPS, CLIP) are out of scope; report tables reserve their columns as
empty so downstream tooling sees a stable schema.

Judge scores (prompt following, consistency, perceptual quality) are
elicited from a chat judge, never computed here; the overall score is
sqrt(min(pf, cons) * pq).
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chat import ChatClient, ChatClientConfig, parse_json_reply, run_structured
from .grids import PixelImage
from .imageio import image_to_png_bytes
from .parsing import prompt_text

__all__ = [
    "ScoreTriple",
    "RegionMetricReport",
    "MaskSet",
    "overall_score",
    "avg_at_k",
    "background_metrics",
    "judge_scores",
    "judge_scores_avg",
    "write_s1_csv",
    "write_scores_csv",
    "PSNR_CAP_DB",
    "SSIM_WINDOW",
]

PSNR_CAP_DB = 100.0
_PSNR_CAP_MSE = 1e-10
SSIM_WINDOW = 8
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2

# s1 table ordering; the engine fills only the background-preservation
# columns it can compute, the rest stay empty by design.
_S1_COLUMNS = (
    "sample",
    "structure_distance",
    "psnr",
    "lpips",
    "mse",
    "ssim",
    "clip_whole",
    "clip_edited",
)

_SCORE_COLUMNS = ("sample", "pf", "cons", "pq", "overall")


@dataclass(frozen=True)
class ScoreTriple:
    """Prompt-following, consistency, perceptual-quality scores in [0, 10]."""

    pf: float
    cons: float
    pq: float

    def __post_init__(self):
        for name, value in (("pf", self.pf), ("cons", self.cons), ("pq", self.pq)):
            if not 0.0 <= value <= 10.0:
                raise ValueError(f"{name}={value} outside [0, 10]")


def overall_score(s: ScoreTriple) -> float:
    return math.sqrt(min(s.pf, s.cons) * s.pq)


def avg_at_k(samples: list[ScoreTriple] | tuple[ScoreTriple, ...], k: int) -> ScoreTriple:
    """Componentwise mean of exactly k score triples."""
    if not samples:
        raise ValueError("no score triples to average")
    if len(samples) != k:
        raise ValueError(f"expected {k} score triples, got {len(samples)}")
    return ScoreTriple(
        pf=sum(s.pf for s in samples) / k,
        cons=sum(s.cons for s in samples) / k,
        pq=sum(s.pq for s in samples) / k,
    )


@dataclass(frozen=True, eq=False)
class MaskSet:
    """Ground-truth target masks sharing one image's dimensions."""

    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        converted = []
        shape = None
        for i, mask in enumerate(self.masks):
            arr = np.asarray(mask)
            if arr.ndim != 2:
                raise ValueError(f"mask {i} must be 2-D, got shape {arr.shape}")
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError(f"mask {i} shape {arr.shape} != {shape}")
            converted.append(arr.astype(bool))
        object.__setattr__(self, "masks", tuple(converted))
        if shape is None:
            union = None
        else:
            union = np.zeros(shape, dtype=bool)
            for arr in converted:
                union |= arr
        object.__setattr__(self, "_union", union)

    def union_for(self, height: int, width: int) -> np.ndarray:
        """Mask union, materialized at the given dims when the set is empty."""
        union = getattr(self, "_union")
        if union is None:
            return np.zeros((height, width), dtype=bool)
        if union.shape != (height, width):
            raise ValueError(f"mask dims {union.shape} != image dims {(height, width)}")
        return union


@dataclass(frozen=True)
class RegionMetricReport:
    """Pixel metrics over one mask-defined region of an image pair."""

    psnr: float
    mse: float
    ssim: float | None
    pixel_count: int
    mask_id: str

    def to_dict(self) -> dict:
        return {
            "mask_id": self.mask_id,
            "pixel_count": self.pixel_count,
            "mse": self.mse,
            "psnr": self.psnr,
            "ssim": self.ssim,
        }


def _luma(image: PixelImage) -> np.ndarray:
    v = image.values
    return 0.299 * v[:, :, 0] + 0.587 * v[:, :, 1] + 0.114 * v[:, :, 2]


def _masked_ssim(ref_luma: np.ndarray, edit_luma: np.ndarray,
                 valid: np.ndarray) -> float | None:
    """Mean SSIM over 8x8 uniform windows lying fully inside `valid`."""
    h, w = ref_luma.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        return None
    win = (SSIM_WINDOW, SSIM_WINDOW)
    ref_w = np.lib.stride_tricks.sliding_window_view(ref_luma, win)
    edit_w = np.lib.stride_tricks.sliding_window_view(edit_luma, win)
    ok = np.lib.stride_tricks.sliding_window_view(valid, win).all(axis=(2, 3))
    if not ok.any():
        return None
    ref_w = ref_w[ok]
    edit_w = edit_w[ok]
    mu_x = ref_w.mean(axis=(1, 2))
    mu_y = edit_w.mean(axis=(1, 2))
    var_x = (ref_w * ref_w).mean(axis=(1, 2)) - mu_x * mu_x
    var_y = (edit_w * edit_w).mean(axis=(1, 2)) - mu_y * mu_y
    cov = (ref_w * edit_w).mean(axis=(1, 2)) - mu_x * mu_y
    numerator = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    denominator = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float((numerator / denominator).mean())


def background_metrics(
    reference: PixelImage, edited: PixelImage, masks: MaskSet
) -> RegionMetricReport:
    """MSE, PSNR, and SSIM over everything outside the mask union."""
    if reference.values.shape != edited.values.shape:
        raise ValueError(
            f"image dims differ: {reference.values.shape} vs {edited.values.shape}"
        )
    union = masks.union_for(reference.height, reference.width)
    background = ~union
    if not background.any():
        raise ValueError("mask union covers the whole image; background is empty")
    diff = reference.values[background] - edited.values[background]
    mse = float(np.mean(diff * diff))
    psnr = PSNR_CAP_DB if mse < _PSNR_CAP_MSE else 10.0 * math.log10(1.0 / mse)
    ssim = _masked_ssim(_luma(reference), _luma(edited), background)
    return RegionMetricReport(
        psnr=psnr,
        mse=mse,
        ssim=ssim,
        pixel_count=int(background.sum()),
        mask_id="background",
    )


def _score_validator(key: str):
    def validate(raw: str) -> float:
        value = parse_json_reply(raw)
        if not isinstance(value, dict) or key not in value:
            raise ValueError(f"reply must be a JSON object with a {key!r} key")
        score = value[key]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ValueError(f"{key} must be a number, got {type(score).__name__}")
        if not 0.0 <= float(score) <= 10.0:
            raise ValueError(f"{key}={score} outside [0, 10]")
        return float(score)

    return validate


def _attachment_header(original: PixelImage, edited: PixelImage) -> str:
    # Pixels travel out of band in a multimodal deployment; the digests pin
    # exactly which pair this judgment refers to.
    orig = hashlib.sha256(image_to_png_bytes(original)).hexdigest()[:16]
    edit = hashlib.sha256(image_to_png_bytes(edited)).hexdigest()[:16]
    return f"[attached images: first={orig} second={edit}]\n\n"


def judge_scores(
    original_masked: PixelImage,
    edited: PixelImage,
    instruction: str,
    judge_client: ChatClient,
    config: ChatClientConfig | None = None,
    full_original: PixelImage | None = None,
) -> tuple[ScoreTriple, dict]:
    """Elicit one PF/Cons/PQ triple from the judge.

    PF and Cons see the masked original next to the edited image; PQ sees
    the full original (falling back to the masked one if not provided).
    Returns the triple plus per-component retry counts.
    """
    config = config or ChatClientConfig()
    retries = {}
    components = {}
    for key, first_image in (
        ("pf", original_masked),
        ("cons", original_masked),
        ("pq", full_original if full_original is not None else original_masked),
    ):
        prompt = _attachment_header(first_image, edited) + prompt_text(
            f"judge_{key}_v1.txt"
        ).replace("{instruction}", instruction)
        result = run_structured(judge_client, prompt, _score_validator(key), config)
        components[key] = result.value
        retries[key] = result.retry_count
    return ScoreTriple(**components), retries


def judge_scores_avg(
    original_masked: PixelImage,
    edited: PixelImage,
    instruction: str,
    judge_client: ChatClient,
    config: ChatClientConfig | None = None,
    full_original: PixelImage | None = None,
    k: int = 3,
) -> ScoreTriple:
    """avg@k protocol: k independent PF/Cons elicitations, single PQ."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    triples = []
    pq = None
    for i in range(k):
        triple, _ = judge_scores(
            original_masked, edited, instruction, judge_client, config,
            full_original=full_original,
        )
        if pq is None:
            pq = triple.pq
        triples.append(ScoreTriple(pf=triple.pf, cons=triple.cons, pq=pq))
    return avg_at_k(triples, k)


def write_s1_csv(path: str | Path, rows: list[dict]) -> Path:
    """Background-preservation table; neural columns reserved empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_S1_COLUMNS, restval="")
        writer.writeheader()
        for row in rows:
            out = {
                "sample": row.get("sample", ""),
                "psnr": _fmt(row.get("psnr")),
                "mse": _fmt(row.get("mse")),
                "ssim": _fmt(row.get("ssim")),
            }
            writer.writerow(out)
    return path


def write_scores_csv(path: str | Path, rows: list[dict]) -> Path:
    """PF/Cons/PQ/Overall table in headline-table ordering."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_SCORE_COLUMNS, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "sample": row.get("sample", ""),
                    "pf": _fmt(row.get("pf")),
                    "cons": _fmt(row.get("cons")),
                    "pq": _fmt(row.get("pq")),
                    "overall": _fmt(row.get("overall")),
                }
            )
    return path


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)
