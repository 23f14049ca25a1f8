"""The engine drives this server over a real socket.

Two guarantees: (1) any served model passes the engine's conformance
suite, and (2) swapping the engine's in-process analytic backend for the
served one changes nothing but f32/8-bit transport loss, with background
preservation still holding at 1e-6.
"""

import threading

import numpy as np
import pytest

from mosaic.bridge import BridgeBackend, run_conformance
from mosaic.geometry import make_region_instance
from mosaic.grids import lerp
from mosaic.imageio import load_image, save_image
from mosaic.scenes import make_squares_scene, stub_ground
from mosaic.session import run_edit

from mosaic_bridge.models import make_model
from mosaic_bridge.server import BridgeApp, make_server

INSTRUCTION = (
    "set_color the leftmost square to (0.9, 0.1, 0.1); "
    "set_color the rightmost square to (0.1, 0.1, 0.9)"
)
COLORS = ((0.9, 0.1, 0.1), (0.1, 0.1, 0.9))


@pytest.fixture
def serve():
    servers = []

    def start(model_name):
        server = make_server(BridgeApp(make_model(model_name)))
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_port}"

    yield start
    for server in servers:
        server.shutdown()


@pytest.fixture
def reference(tmp_path):
    # round-trip through PNG so every pixel sits on the 8-bit grid and
    # wire transport of the reference is lossless
    path = tmp_path / "scene.png"
    save_image(make_squares_scene().render(), path)
    return load_image(path)


def make_regions(reference, vae_factor, patch):
    pairs = (
        ("the leftmost square", "set_color to (0.9, 0.1, 0.1)"),
        ("the rightmost square", "set_color to (0.1, 0.1, 0.9)"),
    )
    return [
        make_region_instance(
            reference, refer, edit, stub_ground(reference, refer), vae_factor, patch
        )
        for refer, edit in pairs
    ]


def mask_union(regions, height, width):
    union = np.zeros((height, width), dtype=bool)
    for region in regions:
        box = region.box
        union[box.y0 : box.y1, box.x0 : box.x1] = True
    return union


class TestConformance:
    @pytest.mark.parametrize("model_name", ["echo", "pooling-echo", "oracle-echo"])
    def test_every_model_passes(self, serve, model_name):
        report = run_conformance(serve(model_name))
        assert report.ok, f"{model_name}:\n{report.summary()}"
        assert len(report.checks) == 6


class TestEngineSwap:
    def test_edit_lands_on_targets_over_http(self, serve, reference):
        backend = BridgeBackend(serve("oracle-echo"))
        desc = backend.descriptor()
        regions = make_regions(reference, int(desc["vae_factor"]), int(desc["patch"]))
        result = run_edit(
            reference, INSTRUCTION, regions, backend,
            steps=50, rho=0.6, strategy="both", seed=0, record_trace=False,
        )
        outside = ~mask_union(regions, reference.height, reference.width)
        background_gap = float(
            np.max(np.abs(result.image.values[outside] - reference.values[outside]))
        )
        assert background_gap <= 1e-6, f"background gap {background_gap:.3e}"
        for region, color in zip(regions, COLORS):
            box = region.box
            latent_gap = float(
                np.max(
                    np.abs(
                        result.latent.values[:, box.y0 : box.y1, box.x0 : box.x1]
                        - np.asarray(color)[:, None, None]
                    )
                )
            )
            assert latent_gap <= 1e-5, f"{region.expression}: {latent_gap:.3e}"

    def test_zero_velocity_keeps_the_interpolant(self, serve, reference):
        # with a zero velocity field nothing ever moves: the background
        # rides the pinned reference path and region cells stay at the
        # shared initial noise for the whole schedule
        backend = BridgeBackend(serve("echo"))
        desc = backend.descriptor()
        regions = make_regions(reference, int(desc["vae_factor"]), int(desc["patch"]))[:1]
        result = run_edit(
            reference, INSTRUCTION, regions, backend,
            steps=8, rho=0.5, strategy="both", seed=0, record_trace=True,
        )
        union = mask_union(regions, reference.height, reference.width)
        outside = ~union

        noise = result.trace[0].fused
        z0 = backend.encode(reference)
        for index in (0, 2, 5, 8):
            entry = result.trace[index]
            expected = lerp(z0, noise, entry.s)
            np.testing.assert_array_equal(
                entry.fused.values[:, outside], expected.values[:, outside]
            )

        np.testing.assert_array_equal(
            result.latent.values[:, union], noise.values[:, union]
        )
        background_gap = float(
            np.max(np.abs(result.image.values[outside] - reference.values[outside]))
        )
        assert background_gap <= 1e-6
