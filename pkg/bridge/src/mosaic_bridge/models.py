"""Sidecar model implementations.

Every model satisfies the engine's backend protocol (descriptor, encode,
decode, predict_velocity) and extends the descriptor with the wire-level
fields the conformance suite checks: schedule, supports_variable_size,
dtype, and the declared round-trip error bound. Images travel as 8-bit
PNG, so no model can promise a tighter round trip than half a pixel step.
"""

from __future__ import annotations

import numpy as np

from mosaic.backend import Condition
from mosaic.grids import LatentGrid, PixelImage
from mosaic.oracle import IdentityCodec, PoolingCodec
from mosaic.scenes import make_scene_oracle

__all__ = [
    "UnsupportedSize",
    "EchoModel",
    "PoolingEchoModel",
    "OracleEchoModel",
    "MODEL_NAMES",
    "make_model",
]

# 8-bit PNG transport bounds any pixel round trip
PNG_STEP = 1.0 / 255.0


class UnsupportedSize(ValueError):
    """Image dimensions the codec cannot represent; maps to HTTP 422."""


def _descriptor_base(name: str, vae_factor: int, patch: int) -> dict:
    return {
        "name": name,
        "vae_factor": vae_factor,
        "patch": patch,
        "schedule": "uniform",
        "supports_variable_size": True,
        "dtype": "float32",
        "round_trip_max_abs_error": PNG_STEP,
    }


class EchoModel:
    """Identity codec and an all-zero velocity field.

    The minimal conforming model: encode/decode are exact, and a zero
    velocity leaves every trajectory at its interpolant, which is what
    engine-side integration tests pin down.
    """

    def __init__(self):
        self._codec = IdentityCodec()

    def descriptor(self) -> dict:
        return _descriptor_base("echo", 1, 1)

    def encode(self, image: PixelImage) -> LatentGrid:
        return self._codec.encode(image)

    def decode(self, latent: LatentGrid) -> PixelImage:
        return self._codec.decode(latent)

    def predict_velocity(
        self, latent: LatentGrid, s: float, condition: Condition
    ) -> LatentGrid:
        return LatentGrid(np.zeros_like(latent.values))


class PoolingEchoModel:
    """Zero-velocity model over a 2x downsampling codec.

    Exists so the size-contract paths are reachable: dimensions that do
    not divide by the factor are refused rather than silently resampled.
    """

    def __init__(self):
        self._codec = PoolingCodec()

    def descriptor(self) -> dict:
        desc = _descriptor_base("pooling-echo", 2, 1)
        # 2x2 mean pool + nearest decode loses structure, not just bits
        desc["round_trip_max_abs_error"] = 1.0
        return desc

    def encode(self, image: PixelImage) -> LatentGrid:
        factor = self._codec.factor
        if image.height % factor or image.width % factor:
            raise UnsupportedSize(
                f"image {image.height}x{image.width} is not a multiple of "
                f"the codec factor {factor}"
            )
        return self._codec.encode(image)

    def decode(self, latent: LatentGrid) -> PixelImage:
        return self._codec.decode(latent)

    def predict_velocity(
        self, latent: LatentGrid, s: float, condition: Condition
    ) -> LatentGrid:
        return LatentGrid(np.zeros_like(latent.values))


class OracleEchoModel:
    """Analytic velocities for synthetic scenes, served over the wire.

    Wraps the engine package's scene-resolving backend so an end-to-end
    edit through HTTP must land on the same targets as the in-process
    run, up to f32 transport. Instructions the toy grammar cannot parse
    fall back to the noop target (denoise toward the conditioning image),
    keeping the model total over arbitrary probe prompts.
    """

    def __init__(self):
        self._backend = make_scene_oracle()

    def descriptor(self) -> dict:
        inner = self._backend.descriptor()
        desc = _descriptor_base(
            "oracle-echo", int(inner["vae_factor"]), int(inner["patch"])
        )
        return desc

    def encode(self, image: PixelImage) -> LatentGrid:
        return self._backend.encode(image)

    def decode(self, latent: LatentGrid) -> PixelImage:
        return self._backend.decode(latent)

    def predict_velocity(
        self, latent: LatentGrid, s: float, condition: Condition
    ) -> LatentGrid:
        try:
            return self._backend.predict_velocity(latent, s, condition)
        except ValueError:
            noop = Condition(image=condition.image, instruction="noop")
            return self._backend.predict_velocity(latent, s, noop)


MODEL_NAMES = ("echo", "pooling-echo", "oracle-echo")


def make_model(name: str):
    if name == "echo":
        return EchoModel()
    if name == "pooling-echo":
        return PoolingEchoModel()
    if name == "oracle-echo":
        return OracleEchoModel()
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
