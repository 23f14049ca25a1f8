"""Denoiser backend contract shared by the fusion engine and its drivers.

A backend bundles a latent codec with a conditional velocity model. The
engine only ever talks to this protocol; the analytic toy backend and the
HTTP sidecar client both satisfy it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from .grids import LatentGrid, PixelImage

__all__ = ["Condition", "DenoiserBackend"]


@dataclass(frozen=True)
class Condition:
    """Conditioning pair for one branch: an image and an instruction."""

    image: PixelImage
    instruction: str

    def __post_init__(self) -> None:
        if not self.instruction.strip():
            raise ValueError("condition instruction must be non-empty")


@runtime_checkable
class DenoiserBackend(Protocol):
    """Latent codec + conditional velocity prediction."""

    def predict_velocity(
        self, latent: LatentGrid, s: float, condition: Condition
    ) -> LatentGrid:
        """Velocity field at time s for Euler integration toward s=0."""
        ...

    def encode(self, image: PixelImage) -> LatentGrid:
        ...

    def decode(self, latent: LatentGrid) -> PixelImage:
        ...

    def descriptor(self) -> dict:
        """At least {"vae_factor": int, "patch": int, "name": str}."""
        ...
