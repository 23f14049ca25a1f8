"""
Serving a denoiser behind an HTTP sidecar
=========================================

The engine talks to real models through a small HTTP protocol: descriptor,
encode, decode, velocity, segment. This script starts two in-process
sidecars from the companion bridge package, checks the wire contract with
the conformance probe, then runs a full edit where every velocity query
travels over HTTP.

Requires the bridge package: pip install -e ./bridge
"""

import sys
import threading
from pathlib import Path

import numpy as np

from mosaic import (
    make_region_instance,
    make_squares_scene,
    mask_union,
    run_edit,
    stub_ground,
)
from mosaic.bridge import BridgeBackend, run_conformance
from mosaic.imageio import load_image, save_image
from mosaic.parsing import stub_decompose

try:
    from mosaic_bridge import BridgeApp, make_model, make_server
except ImportError:
    sys.exit("mosaic_bridge is not installed; run: pip install -e ./bridge")

OUT = Path(__file__).parent / "out" / "http_sidecar"
OUT.mkdir(parents=True, exist_ok=True)


def start_sidecar(model_name):
    app = BridgeApp(make_model(model_name))
    server = make_server(app)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, f"http://127.0.0.1:{server.server_port}"


# Conformance: six checks against the zero-velocity echo model. Any sidecar
# that passes these can be plugged into the engine.
echo_server, echo_url = start_sidecar("echo")
report = run_conformance(echo_url)
print(f"conformance against echo sidecar at {echo_url}:")
for check in report.checks:
    print(f"  {'pass' if check.passed else 'FAIL'}  {check.name}: {check.detail}")
assert report.ok
echo_server.shutdown()

# Full edit over the wire. The oracle-echo model serves analytic velocities,
# so the HTTP run must land on the same targets as the in-process oracle.
oracle_server, oracle_url = start_sidecar("oracle-echo")
backend = BridgeBackend(oracle_url)
print(f"\nremote descriptor: {backend.descriptor()}")

# Round-trip the reference through PNG first so every pixel sits on the
# 8-bit grid and wire transport of the image is lossless.
save_image(make_squares_scene().render(), OUT / "reference.png")
reference = load_image(OUT / "reference.png")

instruction = (
    "set_color the leftmost square to (0.9, 0.1, 0.1); "
    "set_color the rightmost square to (0.1, 0.1, 0.9)"
)
regions = [
    make_region_instance(reference, ref, edit, stub_ground(reference, ref), 1, 1)
    for ref, edit in stub_decompose(instruction).pairs
]
result = run_edit(
    reference, instruction, regions, backend,
    steps=50, rho=0.6, strategy="both", seed=0, record_trace=False,
)
oracle_server.shutdown()
save_image(result.image, OUT / "edited.png")

outside = ~mask_union([r.mask for r in regions], (reference.height, reference.width)).bits
bg_gap = float(np.max(np.abs(result.image.values[outside] - reference.values[outside])))
print(f"background gap after HTTP round trips: {bg_gap:.2e}")
assert bg_gap <= 1e-6

for region, color in zip(regions, ((0.9, 0.1, 0.1), (0.1, 0.1, 0.9))):
    box = region.box
    patch = result.image.values[box.y0:box.y1, box.x0:box.x1]
    gap = float(np.max(np.abs(patch - np.asarray(color))))
    print(f"{region.expression!r}: max gap to target {gap:.2e}")
    assert gap <= 1.0 / 255.0 + 1e-5

print(f"wrote {OUT / 'edited.png'}")
