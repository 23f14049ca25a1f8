"""
Ablating the fusion strategy
============================

Three strategies control which branches advance and whether the background
stays pinned:

  no_target      regions frozen, only the global branch denoises
  no_background  regions and global advance, background follows the global
  both           regions advance early, global late, background pinned

Run all three at rho=0 with the weak single-clause resolver and check which
half of the contract each one keeps: instruction fidelity in the regions,
and background preservation outside them.
"""

from pathlib import Path

import numpy as np

from mosaic import (
    make_oracle_backend,
    make_region_instance,
    make_squares_scene,
    mask_union,
    run_edit,
    stub_ground,
)
from mosaic.imageio import save_image
from mosaic.parsing import stub_decompose

OUT = Path(__file__).parent / "out" / "strategy_ablation"
OUT.mkdir(parents=True, exist_ok=True)

reference = make_squares_scene().render()
instruction = (
    "set_color the leftmost square to (0.9, 0.1, 0.1); "
    "set_color the rightmost square to (0.1, 0.1, 0.9)"
)
targets = ((0.9, 0.1, 0.1), (0.1, 0.1, 0.9))


def hits_targets(values, regions):
    for region, color in zip(regions, targets):
        box = region.box
        patch = values[box.y0:box.y1, box.x0:box.x1]
        if float(np.max(np.abs(patch - np.asarray(color)))) > 1e-9:
            return False
    return True


print("strategy        fidelity  background")
for strategy in ("no_target", "no_background", "both"):
    regions = [
        make_region_instance(reference, ref, edit, stub_ground(reference, ref), 1, 1)
        for ref, edit in stub_decompose(instruction).pairs
    ]
    result = run_edit(
        reference, instruction, regions, make_oracle_backend(),
        steps=50, rho=0.0, strategy=strategy, seed=0,
    )
    save_image(result.image, OUT / f"{strategy}.png")

    outside = ~mask_union([r.mask for r in regions], (reference.height, reference.width)).bits
    fidelity = hits_targets(result.image.values, regions)
    background = bool(
        np.array_equal(result.image.values[outside], reference.values[outside])
    )
    print(f"{strategy:<15} {str(fidelity):<9} {background}")

print(f"\nonly 'both' keeps both halves; images under {OUT}")
