"""Denoising time grid, phase switching, and the Euler update rule.

Normalized time s runs from 1 (pure noise) down to 0 (clean). The grid has
T+1 points times[i] = (T - i) / T; the step taken at grid point i carries the
state from times[i] to times[i+1]. A run is split at the switch ratio rho:
steps with s > rho belong to the regional phase, steps with s <= rho to the
global phase (the step at s == rho is global).
"""

from __future__ import annotations

from dataclasses import dataclass

from .grids import LatentGrid, NoiseField, lerp

__all__ = [
    "STRATEGIES",
    "DEFAULT_STEPS",
    "DEFAULT_RHO",
    "SINGLE_INSTRUCTION_RHO",
    "TimeGrid",
    "SwitchPolicy",
    "make_time_grid",
    "is_region_phase",
    "region_step_count",
    "reference_latent",
    "euler_step",
]

STRATEGIES = ("both", "no_target", "no_background")

DEFAULT_STEPS = 50
DEFAULT_RHO = 0.6
# Single-instruction edits favor a shorter regional interval.
SINGLE_INSTRUCTION_RHO = 0.8


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing grid of normalized times from 1.0 to 0.0."""

    times: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.times) < 2 or self.times[0] != 1.0 or self.times[-1] != 0.0:
            raise ValueError("time grid must run from 1.0 down to 0.0")
        if any(a <= b for a, b in zip(self.times, self.times[1:])):
            raise ValueError("time grid must be strictly decreasing")

    @property
    def steps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True)
class SwitchPolicy:
    """Switch ratio rho plus the branch-fusion strategy."""

    rho: float
    strategy: str = "both"

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}"
            )


def make_time_grid(steps: int) -> TimeGrid:
    """Uniform grid times[i] = (T - i) / T for i in 0..T.

    The (T - i) / T form is exact in binary at the usual switch ratios
    (e.g. 30/50 == 0.6), so the inclusive-late boundary comparison at
    s == rho is not at the mercy of rounding.
    """
    if steps < 1:
        raise ValueError(f"steps must be positive, got {steps}")
    return TimeGrid(times=tuple((steps - i) / steps for i in range(steps + 1)))


def is_region_phase(s: float, policy: SwitchPolicy) -> bool:
    """True iff a step taken at time s belongs to the regional phase (s > rho)."""
    return s > policy.rho


def region_step_count(grid: TimeGrid, policy: SwitchPolicy) -> int:
    """Number of steps the grid spends in the regional phase."""
    return sum(1 for s in grid.times[:-1] if is_region_phase(s, policy))


def reference_latent(z0: LatentGrid, eps: NoiseField, s: float) -> LatentGrid:
    """Forward-noised reference trajectory (1-s)*z0 + s*eps.

    Exactly z0 at s=0 and exactly eps at s=1; the background of every fused
    latent is pinned to this path.
    """
    return lerp(z0, eps, s)


def euler_step(z: LatentGrid, velocity: LatentGrid, ds: float) -> LatentGrid:
    """One explicit Euler update z - ds * velocity, integrating s toward 0."""
    if z.shape != velocity.shape:
        raise ValueError(f"euler shape mismatch: {z.shape} vs {velocity.shape}")
    if ds <= 0.0:
        raise ValueError(f"ds must be positive, got {ds}")
    return LatentGrid(z.values - ds * velocity.values)
