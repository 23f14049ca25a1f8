"""HTTP sidecar for the regional editing engine's denoiser-bridge protocol.

The engine talks to a model server through five POST endpoints
(/descriptor, /encode, /decode, /velocity, /segment) with base64 f32
tensor payloads and base64 PNG images. This package provides that server
plus stub models that make the whole protocol testable without any
pretrained weights: an echo model (identity codec, zero velocity), a
pooled variant with a real downsample factor, and an analytic model that
serves exact velocities for synthetic scenes.
"""

from .models import EchoModel, OracleEchoModel, PoolingEchoModel, UnsupportedSize, make_model
from .server import BridgeApp, make_server, serve

__all__ = [
    "BridgeApp",
    "EchoModel",
    "OracleEchoModel",
    "PoolingEchoModel",
    "UnsupportedSize",
    "make_model",
    "make_server",
    "serve",
]
