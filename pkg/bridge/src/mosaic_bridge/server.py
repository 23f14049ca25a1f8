"""HTTP layer: routing, status mapping, auth, and request isolation.

`BridgeApp.dispatch` is a pure function from (path, body, auth header) to
(status, payload), so every contract path is unit-testable without a
socket; `make_server` binds it to a threading HTTP server for the real
thing. Model execution is serialized behind one lock, which is the
concurrency contract the engine relies on: concurrent requests are
accepted and each sees an isolated, complete model call.

Status mapping: 400 malformed payloads, 401 bad credentials, 404 unknown
endpoint, 422 unsupported image size, 500 unexpected model failure (with
a traceback id the operator can look up), 501 segmenter not loaded,
503 while the model is loading.
"""

from __future__ import annotations

import json
import logging
import threading
import traceback
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from mosaic.backend import Condition
from mosaic.bridge import (
    BridgeError,
    image_from_wire,
    image_to_wire,
    tensor_from_wire,
    tensor_to_wire,
)
from mosaic.grids import LatentGrid, PixelImage

from .models import UnsupportedSize

__all__ = ["BridgeApp", "make_server", "serve"]

log = logging.getLogger("mosaic_bridge")


def _resample(image: PixelImage, height: int, width: int) -> PixelImage:
    if (image.height, image.width) == (height, width):
        return image
    arr = np.round(image.values * 255.0).astype(np.uint8)
    resized = Image.fromarray(arr).resize((width, height), Image.NEAREST)
    return PixelImage(np.asarray(resized, dtype=np.float64) / 255.0)


class BridgeApp:
    """One loaded model behind the wire protocol.

    fixed_canvas, when set, flips the descriptor to
    supports_variable_size=false and makes the server resample incoming
    images to that canvas before they reach the model. auth_token, when
    set, requires "Authorization: Bearer <token>" on every request.
    """

    def __init__(
        self,
        model,
        *,
        segmenter: str | None = "box",
        fixed_canvas: tuple[int, int] | None = None,
        auth_token: str | None = None,
        ready: bool = True,
    ):
        if segmenter not in ("box", None):
            raise ValueError(f"unknown segmenter {segmenter!r}")
        if fixed_canvas is not None:
            height, width = fixed_canvas
            if height < 1 or width < 1:
                raise ValueError(f"fixed canvas must be positive, got {fixed_canvas}")
        self.model = model
        self.segmenter = segmenter
        self.fixed_canvas = fixed_canvas
        self.auth_token = auth_token
        self._ready = threading.Event()
        if ready:
            self._ready.set()
        self._model_lock = threading.Lock()
        self._tracebacks: dict[str, str] = {}

    def set_ready(self) -> None:
        self._ready.set()

    def traceback_for(self, traceback_id: str) -> str | None:
        return self._tracebacks.get(traceback_id)

    # request plumbing

    def dispatch(self, path: str, raw_body: bytes, auth_header: str | None):
        if self.auth_token is not None:
            if auth_header != f"Bearer {self.auth_token}":
                return 401, {"error": "missing or invalid bearer token"}
        if not self._ready.is_set():
            return 503, {"error": "model is still loading"}
        routes = {
            "/descriptor": self._descriptor,
            "/encode": self._encode,
            "/decode": self._decode,
            "/velocity": self._velocity,
            "/segment": self._segment,
        }
        handler = routes.get(path)
        if handler is None:
            return 404, {"error": f"no endpoint {path}"}
        try:
            body = json.loads(raw_body or b"{}")
        except ValueError:
            return 400, {"error": "request body is not JSON"}
        if not isinstance(body, dict):
            return 400, {"error": "request body must be a JSON object"}
        try:
            return handler(body)
        except UnsupportedSize as exc:
            return 422, {"error": str(exc)}
        except (BridgeError, KeyError, TypeError, ValueError, OSError) as exc:
            # OSError covers undecodable image bytes from the PNG reader
            return 400, {"error": str(exc)}
        except Exception as exc:  # noqa: BLE001 - report, keep serving
            tid = uuid.uuid4().hex[:12]
            self._tracebacks[tid] = traceback.format_exc()
            log.error("request to %s failed [%s]\n%s", path, tid, self._tracebacks[tid])
            return 500, {"error": str(exc), "traceback_id": tid}

    # endpoints

    def _descriptor(self, body: dict):
        desc = dict(self.model.descriptor())
        if self.fixed_canvas is not None:
            desc["supports_variable_size"] = False
            desc["canvas"] = list(self.fixed_canvas)
        return 200, desc

    def _incoming_image(self, body: dict, key: str = "image") -> PixelImage:
        if key not in body:
            raise BridgeError(f"request is missing {key!r}")
        image = image_from_wire(body[key])
        if self.fixed_canvas is not None:
            image = _resample(image, *self.fixed_canvas)
        return image

    def _encode(self, body: dict):
        image = self._incoming_image(body)
        with self._model_lock:
            latent = self.model.encode(image)
        return 200, {"latent": tensor_to_wire(latent)}

    def _decode(self, body: dict):
        if "latent" not in body:
            raise BridgeError("request is missing 'latent'")
        latent = LatentGrid(tensor_from_wire(body["latent"]))
        with self._model_lock:
            image = self.model.decode(latent)
        return 200, {"image": image_to_wire(image)}

    def _velocity(self, body: dict):
        for key in ("latent", "s", "image", "instruction"):
            if key not in body:
                raise BridgeError(f"request is missing {key!r}")
        latent = tensor_from_wire(body["latent"])
        s = float(body["s"])
        if not isinstance(body["instruction"], str):
            raise BridgeError("instruction must be a string")
        image = self._incoming_image(body)
        with self._model_lock:
            expected = self.model.encode(image).values.shape
            if latent.shape != expected:
                return 400, {
                    "error": (
                        f"latent shape {list(latent.shape)} does not match the "
                        f"conditioning image (expected {list(expected)})"
                    )
                }
            velocity = self.model.predict_velocity(
                LatentGrid(latent), s,
                Condition(image=image, instruction=body["instruction"]),
            )
        return 200, {"velocity": tensor_to_wire(velocity)}

    def _segment(self, body: dict):
        if self.segmenter is None:
            return 501, {"error": "segmenter not loaded"}
        image = self._incoming_image(body)
        boxes = body.get("boxes")
        if not isinstance(boxes, list):
            raise BridgeError("request is missing 'boxes'")
        masks = []
        for box in boxes:
            if not isinstance(box, (list, tuple)) or len(box) != 4:
                raise BridgeError(f"box must be [x0, y0, x1, y1], got {box!r}")
            x0, y0, x1, y1 = (int(v) for v in box)
            if not (0 <= x0 < x1 <= image.width and 0 <= y0 < y1 <= image.height):
                raise BridgeError(
                    f"box {[x0, y0, x1, y1]} falls outside the "
                    f"{image.height}x{image.width} image"
                )
            bits = np.zeros((image.height, image.width, 3))
            bits[y0:y1, x0:x1, :] = 1.0
            masks.append(image_to_wire(PixelImage(bits)))
        return 200, {"masks": masks}


class _Handler(BaseHTTPRequestHandler):
    app: BridgeApp

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0) or 0)
        raw = self.rfile.read(length) if length else b""
        status, payload = self.app.dispatch(
            self.path, raw, self.headers.get("Authorization")
        )
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        log.debug("%s", args)


def make_server(app: BridgeApp, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("_BoundHandler", (_Handler,), {"app": app})
    return ThreadingHTTPServer((host, port), handler)


def serve(app: BridgeApp, host: str = "127.0.0.1", port: int = 8787) -> None:
    server = make_server(app, host, port)
    log.info("serving on http://%s:%d", host, server.server_port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
