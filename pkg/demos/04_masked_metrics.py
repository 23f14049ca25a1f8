"""
Masked background metrics and the judge protocol
================================================

Two measurement layers: pixel metrics restricted to everything outside the
target masks (MSE, PSNR, SSIM), and an LLM-judge triple (prompt following,
consistency, perceptual quality) averaged over three rounds. The judge is
mocked here with canned replies so the script runs offline.
"""

import json
from pathlib import Path

import numpy as np

from mosaic import make_squares_scene
from mosaic.chat import MockChatClient
from mosaic.grids import PixelImage
from mosaic.metrics import (
    MaskSet,
    ScoreTriple,
    background_metrics,
    judge_scores_avg,
    overall_score,
    write_s1_csv,
)

OUT = Path(__file__).parent / "out" / "masked_metrics"
OUT.mkdir(parents=True, exist_ok=True)

scene = make_squares_scene()
reference = scene.render()

# Target masks straight from the scene geometry.
masks = []
for obj in scene.objects:
    bits = np.zeros((reference.height, reference.width), dtype=bool)
    bits[obj.box.y0:obj.box.y1, obj.box.x0:obj.box.x1] = True
    masks.append(bits)
mask_set = MaskSet(masks=tuple(masks))

# Identical images: zero error, capped PSNR, perfect SSIM.
same = background_metrics(reference, reference, mask_set)
print(f"identical:   mse={same.mse} psnr={same.psnr} ssim={same.ssim}")

# A uniform +0.1 shift outside the masks lands on PSNR = 20 dB exactly.
shifted = PixelImage(values=np.clip(reference.values + 0.1, 0.0, 1.0))
shift = background_metrics(reference, shifted, mask_set)
print(f"+0.1 shift:  mse={shift.mse:.4f} psnr={shift.psnr:.6f} ssim={shift.ssim:.4f}")

# Edits confined to the masks are invisible to the background metrics.
edited = reference.values.copy()
box = scene.objects[0].box
edited[box.y0:box.y1, box.x0:box.x1] = (0.9, 0.1, 0.1)
in_mask = background_metrics(reference, PixelImage(values=edited), mask_set)
print(f"in-mask edit: mse={in_mask.mse} psnr={in_mask.psnr} ssim={in_mask.ssim}")

rows = [
    {"sample": name, **report.to_dict()}
    for name, report in (("identical", same), ("shift", shift), ("in_mask", in_mask))
]
write_s1_csv(OUT / "background.csv", rows)

# Judge triple with a scripted client. Each elicitation asks for one score
# component, three rounds of PF/Cons plus one shared PQ, nine calls total.
replies = []
for _ in range(3):
    replies += [json.dumps({"pf": 8}), json.dumps({"cons": 7}), json.dumps({"pq": 9})]
judge = MockChatClient(replies=replies)
triple = judge_scores_avg(
    reference, PixelImage(values=edited),
    "set the leftmost square red", judge, k=3,
)
print(f"\njudge avg@3: pf={triple.pf} cons={triple.cons} pq={triple.pq}")

# Overall score is the geometric mean of the weaker instruction score
# (min of pf and cons) and perceptual quality.
overall = overall_score(triple)
print(f"overall: {overall:.3f} (by hand: sqrt(min(8,7)*9) = {np.sqrt(7 * 9):.3f})")
assert abs(overall - float(np.sqrt(7 * 9))) < 1e-9

reference_triple = ScoreTriple(pf=8.086, cons=9.006, pq=8.808)
print(f"reference triple {reference_triple} -> {overall_score(reference_triple):.3f}")
print(f"wrote {OUT / 'background.csv'}")
