"""HTTP bridge client: a DenoiserBackend served by a model sidecar.

Tensor payloads travel as base64 little-endian float32 with an explicit
[C, H, W] shape array; images as base64 PNG. The engine stays float64
internally, so a bridge round trip costs f32 precision, which is why
bridge-backed exactness claims carry a 1e-6 tolerance instead of
bit-exactness. The sidecar declares its own round-trip error bound in the
descriptor and the conformance suite holds it to that bound.
"""

from __future__ import annotations

import base64
import concurrent.futures
from dataclasses import dataclass

import numpy as np
import requests

from .backend import Condition
from .grids import LatentGrid, PixelImage
from .imageio import image_from_png_bytes, image_to_png_bytes

__all__ = [
    "BridgeError",
    "BridgeBackend",
    "ConformanceCheck",
    "ConformanceReport",
    "run_conformance",
    "tensor_to_wire",
    "tensor_from_wire",
    "image_to_wire",
    "image_from_wire",
]


class BridgeError(RuntimeError):
    """Bridge request failed: transport error or non-2xx status."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


def tensor_to_wire(values: np.ndarray | LatentGrid) -> dict:
    if isinstance(values, LatentGrid):
        values = values.values
    arr = np.ascontiguousarray(values, dtype="<f4")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def tensor_from_wire(obj: dict) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise BridgeError("tensor payload must carry 'shape' and 'data'")
    shape = tuple(int(v) for v in obj["shape"])
    raw = base64.b64decode(obj["data"])
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise BridgeError(
            f"tensor payload size {len(raw)} bytes does not match shape "
            f"{shape} ({expected} bytes)"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def image_to_wire(image: PixelImage) -> str:
    return base64.b64encode(image_to_png_bytes(image)).decode("ascii")


def image_from_wire(data: str) -> PixelImage:
    return image_from_png_bytes(base64.b64decode(data))


class BridgeBackend:
    """DenoiserBackend implementation backed by a sidecar over HTTP."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._descriptor: dict | None = None

    def _post(self, endpoint: str, body: dict) -> dict:
        url = f"{self.base_url}/{endpoint}"
        try:
            resp = requests.post(url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BridgeError(f"bridge unreachable at {url}: {exc}") from exc
        if resp.status_code != 200:
            raise BridgeError(
                f"bridge {endpoint} returned HTTP {resp.status_code}: "
                f"{resp.text[:500]}",
                status=resp.status_code,
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise BridgeError(f"bridge {endpoint} returned non-JSON body") from exc

    def descriptor(self) -> dict:
        if self._descriptor is None:
            desc = self._post("descriptor", {})
            for key in ("name", "vae_factor", "patch"):
                if key not in desc:
                    raise BridgeError(f"bridge descriptor missing {key!r}")
            self._descriptor = desc
        return self._descriptor

    def encode(self, image: PixelImage) -> LatentGrid:
        reply = self._post("encode", {"image": image_to_wire(image)})
        return LatentGrid(tensor_from_wire(reply.get("latent")))

    def decode(self, latent: LatentGrid) -> PixelImage:
        reply = self._post("decode", {"latent": tensor_to_wire(latent)})
        if "image" not in reply:
            raise BridgeError("bridge decode reply missing 'image'")
        return image_from_wire(reply["image"])

    def predict_velocity(self, latent: LatentGrid, s: float, condition: Condition) -> LatentGrid:
        reply = self._post(
            "velocity",
            {
                "latent": tensor_to_wire(latent),
                "s": float(s),
                "image": image_to_wire(condition.image),
                "instruction": condition.instruction,
            },
        )
        velocity = tensor_from_wire(reply.get("velocity"))
        if velocity.shape != latent.values.shape:
            raise BridgeError(
                f"velocity shape {velocity.shape} != latent shape {latent.values.shape}"
            )
        return LatentGrid(velocity)

    def segment(self, image: PixelImage, boxes: list) -> list[np.ndarray]:
        reply = self._post(
            "segment",
            {
                "image": image_to_wire(image),
                "boxes": [list(box) for box in boxes],
            },
        )
        masks = []
        for item in reply.get("masks", []):
            mask_img = image_from_wire(item)
            masks.append(mask_img.values[:, :, 0] >= 0.5)
        return masks


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ConformanceReport:
    checks: tuple[ConformanceCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = [
            f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}"
            for c in self.checks
        ]
        return "\n".join(lines)


def _gradient_image(size: int = 16) -> PixelImage:
    ramp = np.linspace(0.0, 1.0, size)
    values = np.zeros((size, size, 3))
    values[:, :, 0] = ramp[None, :]
    values[:, :, 1] = ramp[:, None]
    values[:, :, 2] = 0.25
    return PixelImage(values)


def run_conformance(base_url: str, timeout: float = 30.0) -> ConformanceReport:
    """Hold a bridge to the wire contract; usable against any sidecar."""
    backend = BridgeBackend(base_url, timeout=timeout)
    checks: list[ConformanceCheck] = []

    def record(name: str, fn):
        try:
            detail = fn()
            checks.append(ConformanceCheck(name, True, detail or "ok"))
        except Exception as exc:
            checks.append(ConformanceCheck(name, False, str(exc)))

    def check_descriptor():
        first = backend._post("descriptor", {})
        second = backend._post("descriptor", {})
        if first != second:
            raise AssertionError("descriptor changed between calls")
        for key in ("name", "vae_factor", "patch", "round_trip_max_abs_error"):
            if key not in first:
                raise AssertionError(f"descriptor missing {key!r}")
        return f"stable, f={first['vae_factor']} p={first['patch']}"

    def check_round_trip():
        desc = backend.descriptor()
        f = int(desc["vae_factor"])
        image = _gradient_image(max(16, 2 * f))
        latent = backend.encode(image)
        if latent.height != image.height // f or latent.width != image.width // f:
            raise AssertionError(
                f"latent {latent.height}x{latent.width} inconsistent with "
                f"vae_factor {f}"
            )
        decoded = backend.decode(latent)
        if (decoded.height, decoded.width) != (image.height, image.width):
            raise AssertionError("decode changed image dims")
        error = float(np.max(np.abs(decoded.values - image.values)))
        bound = float(desc["round_trip_max_abs_error"])
        if error > bound:
            raise AssertionError(
                f"round-trip error {error:.3e} exceeds declared bound {bound:.3e}"
            )
        return f"round-trip max abs error {error:.3e} <= {bound:.3e}"

    def check_velocity_closure():
        desc = backend.descriptor()
        image = _gradient_image(max(16, 2 * int(desc["vae_factor"])))
        latent = backend.encode(image)
        velocity = backend.predict_velocity(
            latent, 0.5, Condition(image=image, instruction="no-op probe")
        )
        if velocity.values.shape != latent.values.shape:
            raise AssertionError("velocity shape differs from latent shape")
        return f"velocity preserves shape {velocity.values.shape}"

    def check_error_contract():
        url = backend.base_url
        resp = requests.post(f"{url}/encode", json={"image": "not base64!!"},
                             timeout=timeout)
        if resp.status_code != 400:
            raise AssertionError(f"malformed encode gave {resp.status_code}, want 400")
        bad = {
            "latent": {"shape": [1, 2, 2], "data": base64.b64encode(b"\0" * 16).decode()},
            "s": 0.5,
            "image": image_to_wire(_gradient_image(16)),
            "instruction": "probe",
        }
        resp = requests.post(f"{url}/velocity", json=bad, timeout=timeout)
        if resp.status_code != 400:
            raise AssertionError(
                f"velocity size/shape mismatch gave {resp.status_code}, want 400"
            )
        return "400 on malformed image and mismatched tensor"

    def check_segment_contract():
        image = _gradient_image(16)
        try:
            masks = backend.segment(image, [[2, 2, 9, 9]])
        except BridgeError as exc:
            if exc.status == 501:
                return "segment not loaded (501), allowed"
            raise
        if len(masks) != 1 or masks[0].shape != (16, 16):
            raise AssertionError("segment mask dims do not match the image")
        if not masks[0][2:9, 2:9].all() or masks[0][0, 0]:
            raise AssertionError("segment stub mask does not cover its box")
        return "box mask at image resolution"

    def check_concurrency():
        desc = backend.descriptor()
        image = _gradient_image(max(16, 2 * int(desc["vae_factor"])))
        latent = backend.encode(image)
        condition = Condition(image=image, instruction="concurrent probe")

        def call(_):
            return backend.predict_velocity(latent, 0.5, condition)

        with concurrent.futures.ThreadPoolExecutor(max_workers=2) as pool:
            results = list(pool.map(call, range(2)))
        if any(r.values.shape != latent.values.shape for r in results):
            raise AssertionError("concurrent velocity calls disagreed on shape")
        return "two in-flight velocity calls both served"

    record("descriptor-stability", check_descriptor)
    record("encode-decode-round-trip", check_round_trip)
    record("velocity-shape-closure", check_velocity_closure)
    record("error-contract", check_error_contract)
    record("segment-contract", check_segment_contract)
    record("concurrency", check_concurrency)
    return ConformanceReport(checks=tuple(checks))
