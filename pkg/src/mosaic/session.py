"""Two-stage fusion engine: parallel regional branches merged into one latent.

A session owns one reference image, one global instruction, and K grounded
regions. During the regional phase (s > rho) each region branch denoises its
own padded crop; the fused latent composites those branches over the
reference trajectory and is purely observational. At the switch, the last
fused latent becomes the global branch state; during the global phase the
global branch denoises under the full instruction while the background stays
pinned to the reference trajectory. The pinning merge also runs once at s=0,
so it always applies to the final latent.

Strategies:

* ``both``           regional branches early, global branch late, background
                     pinned to the reference trajectory (the default).
* ``no_target``      regional branches never advance; the global branch's own
                     prediction fills the region cells in both phases.
* ``no_background``  background follows the global branch instead of the
                     reference trajectory (no pinning; late fused latents are
                     unmasked global predictions).

With K=0 regions, rho=0 and ``no_background``, the session degenerates to
the plain single-branch global trajectory, which is the baseline the fused
pipeline is measured against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backend import Condition, DenoiserBackend
from .geometry import LatentMask, RegionInstance, crop_latent, mask_union, place
from .grids import LatentGrid, NoiseField, PixelImage, masked_blend, patch_token_count, sample_noise
from .schedule import (
    SwitchPolicy,
    TimeGrid,
    euler_step,
    is_region_phase,
    make_time_grid,
    reference_latent,
    region_step_count,
)

__all__ = [
    "Branch",
    "TraceEntry",
    "RunReport",
    "EditSession",
    "EditResult",
    "init_session",
    "run_early_step",
    "switch_to_global",
    "run_late_step",
    "finalize",
    "run_session",
    "run_edit",
]


@dataclass
class Branch:
    """One denoising branch: conditioning, evolving latent, token cost."""

    condition: Condition
    latent: LatentGrid
    tokens_per_step: int
    region: RegionInstance | None = None  # None for the global branch
    active: bool = True


@dataclass(frozen=True)
class TraceEntry:
    """Fused latent at one grid point.

    ``phase`` labels the step that starts at this grid point ("region" or
    "global"); the entry at s=0 is labeled "final".
    """

    index: int
    s: float
    phase: str
    fused: LatentGrid
    branch_tokens: tuple[int, ...]


@dataclass
class RunReport:
    """Step, token, and timing accounting for one edit run."""

    backend_name: str
    steps_total: int
    steps_region: int
    steps_global: int
    rho: float
    strategy: str
    seed: int
    region_count: int
    tokens_per_step_global: int
    tokens_per_step_regions: tuple[int, ...]
    tokens_region_phase: int
    tokens_region_phase_baseline: int
    tokens_global_phase: int
    parse_seconds: float = 0.0
    detect_seconds: float = 0.0
    inference_seconds: float = 0.0

    @property
    def total_seconds(self) -> float:
        return self.parse_seconds + self.detect_seconds + self.inference_seconds

    def to_dict(self) -> dict:
        # Seconds carry two decimals in reports; raw floats stay internal.
        return {
            "backend": self.backend_name,
            "steps": {
                "total": self.steps_total,
                "region_phase": self.steps_region,
                "global_phase": self.steps_global,
            },
            "rho": self.rho,
            "strategy": self.strategy,
            "seed": self.seed,
            "region_count": self.region_count,
            "tokens": {
                "per_step_global": self.tokens_per_step_global,
                "per_step_regions": list(self.tokens_per_step_regions),
                "region_phase": self.tokens_region_phase,
                "region_phase_global_baseline": self.tokens_region_phase_baseline,
                "global_phase": self.tokens_global_phase,
            },
            "timings": {
                "parse_s": round(self.parse_seconds, 2),
                "detect_s": round(self.detect_seconds, 2),
                "inference_s": round(self.inference_seconds, 2),
                "total_s": round(self.total_seconds, 2),
            },
        }


@dataclass
class EditSession:
    """Mutable state of one fusion run."""

    reference: PixelImage
    instruction: str
    backend: DenoiserBackend
    grid: TimeGrid
    policy: SwitchPolicy
    seed: int
    z0: LatentGrid
    noise: NoiseField
    regions: tuple[RegionInstance, ...]
    region_branches: list[Branch]
    global_branch: Branch
    union: LatentMask
    vae_factor: int
    patch: int
    step_index: int = 0
    switched: bool = False
    last_fused: LatentGrid | None = None
    record_trace: bool = True
    trace: list[TraceEntry] = field(default_factory=list)
    tokens_region_phase: int = 0
    tokens_global_phase: int = 0

    @property
    def steps(self) -> int:
        return self.grid.steps


@dataclass(frozen=True)
class EditResult:
    image: PixelImage
    latent: LatentGrid
    report: RunReport
    trace: tuple[TraceEntry, ...]


def _phase_label(session: EditSession, index: int) -> str:
    if index >= session.steps:
        return "final"
    return "region" if is_region_phase(session.grid.times[index], session.policy) else "global"


def _branch_tokens(session: EditSession) -> tuple[int, ...]:
    return tuple(b.tokens_per_step for b in session.region_branches)


def _record(session: EditSession, index: int, fused: LatentGrid) -> None:
    session.last_fused = fused
    if session.record_trace:
        session.trace.append(
            TraceEntry(
                index=index,
                s=session.grid.times[index],
                phase=_phase_label(session, index),
                fused=fused,
                branch_tokens=_branch_tokens(session),
            )
        )


def init_session(
    reference: PixelImage,
    instruction: str,
    regions: tuple[RegionInstance, ...] | list[RegionInstance],
    backend: DenoiserBackend,
    grid: TimeGrid | None = None,
    policy: SwitchPolicy | None = None,
    seed: int = 0,
    record_trace: bool = True,
) -> EditSession:
    """Validate geometry against the backend and set up all branches at s=1.

    The global noise field is sampled once from the seed; each region branch
    starts from the crop of that same field at its padded box (shared-noise
    rule), so the initial fused latent equals the noise field exactly.
    """
    desc = backend.descriptor()
    f, p = int(desc["vae_factor"]), int(desc["patch"])
    if reference.height % f or reference.width % f:
        raise ValueError(
            f"image {reference.width}x{reference.height} incompatible with "
            f"backend vae_factor {f}"
        )
    lat_h, lat_w = reference.height // f, reference.width // f
    multiple = f * p
    for region in regions:
        pb = region.padded_box
        if pb.width % multiple or pb.height % multiple or pb.x0 % f or pb.y0 % f:
            raise ValueError(
                f"region padded box {pb.to_list()} does not fit the backend "
                f"padding multiple {multiple} (vae_factor {f}, patch {p})"
            )
        if (region.mask.height, region.mask.width) != (lat_h, lat_w):
            raise ValueError(
                f"region mask {region.mask.height}x{region.mask.width} does not "
                f"match the latent grid {lat_h}x{lat_w}"
            )

    z0 = backend.encode(reference)
    if (z0.height, z0.width) != (lat_h, lat_w):
        raise ValueError(
            f"backend encode produced {z0.height}x{z0.width}, expected "
            f"{lat_h}x{lat_w} from vae_factor {f}"
        )
    noise = sample_noise(z0.channels, z0.height, z0.width, seed)

    region_branches = [
        Branch(
            condition=Condition(image=r.crop_image, instruction=r.sub_instruction),
            latent=crop_latent(noise, r.padded_box, f),
            tokens_per_step=patch_token_count(r.padded_box.height, r.padded_box.width, f, p),
            region=r,
        )
        for r in regions
    ]
    global_branch = Branch(
        condition=Condition(image=reference, instruction=instruction),
        latent=LatentGrid(noise.values),
        tokens_per_step=patch_token_count(reference.height, reference.width, f, p),
        region=None,
    )
    session = EditSession(
        reference=reference,
        instruction=instruction,
        backend=backend,
        grid=grid if grid is not None else make_time_grid(50),
        policy=policy if policy is not None else SwitchPolicy(rho=0.6),
        seed=seed,
        z0=z0,
        noise=noise,
        regions=tuple(regions),
        region_branches=region_branches,
        global_branch=global_branch,
        union=mask_union([r.mask for r in regions], shape=(lat_h, lat_w)),
        vae_factor=f,
        patch=p,
        record_trace=record_trace,
    )
    _record(session, 0, _fuse_early(session, 1.0))
    return session


def _composite_regions(session: EditSession, base: LatentGrid) -> LatentGrid:
    """Overwrite base with each placed region branch inside its mask, ascending k."""
    out = base.values.copy()
    for branch in session.region_branches:
        region = branch.region
        placed = place(
            branch.latent,
            region.padded_box,
            session.vae_factor,
            base.height,
            base.width,
        )
        bits = region.mask.bits
        out[:, bits] = placed.values[:, bits]
    return LatentGrid(out)


def _fuse_early(session: EditSession, s: float) -> LatentGrid:
    strategy = session.policy.strategy
    if strategy == "no_target":
        # Region branches are dormant; the global branch's own prediction
        # stands in for every placement term.
        base = reference_latent(session.z0, session.noise, s)
        return masked_blend(base, session.global_branch.latent, session.union)
    if strategy == "no_background":
        base = session.global_branch.latent
    else:
        base = reference_latent(session.z0, session.noise, s)
    return _composite_regions(session, base)


def _fuse_late(session: EditSession, zbar: LatentGrid, s: float) -> LatentGrid:
    if session.policy.strategy == "no_background":
        return zbar
    return masked_blend(reference_latent(session.z0, session.noise, s), zbar, session.union)


def _advance(session: EditSession, branch: Branch, s: float, ds: float) -> None:
    velocity = session.backend.predict_velocity(branch.latent, s, branch.condition)
    branch.latent = euler_step(branch.latent, velocity, ds)


def run_early_step(session: EditSession) -> LatentGrid:
    """One regional-phase step; returns the fused (observational) latent."""
    i = session.step_index
    if i >= session.steps:
        raise ValueError("schedule exhausted")
    s = session.grid.times[i]
    if session.switched or not is_region_phase(s, session.policy):
        raise ValueError(f"step at s={s} is not in the regional phase")
    s_next = session.grid.times[i + 1]
    ds = s - s_next
    strategy = session.policy.strategy
    if strategy in ("both", "no_background"):
        for branch in session.region_branches:
            _advance(session, branch, s, ds)
        session.tokens_region_phase += sum(b.tokens_per_step for b in session.region_branches)
    if strategy in ("no_target", "no_background"):
        _advance(session, session.global_branch, s, ds)
        session.tokens_region_phase += session.global_branch.tokens_per_step
    session.step_index = i + 1
    fused = _fuse_early(session, s_next)
    _record(session, i + 1, fused)
    return fused


def switch_to_global(session: EditSession) -> None:
    """Terminate the regional phase: the last fused latent becomes global state.

    When the regional phase is empty (rho=1) the handoff is the initial fused
    latent at s=1, which by the shared-noise rule equals the noise field, so
    the global branch starts from pure noise.
    """
    if session.switched:
        raise ValueError("session already switched to the global phase")
    session.global_branch.latent = LatentGrid(session.last_fused.values)
    for branch in session.region_branches:
        branch.active = False
    session.switched = True


def run_late_step(session: EditSession) -> LatentGrid:
    """One global-phase step; the fused latent feeds back into the branch."""
    i = session.step_index
    if i >= session.steps:
        raise ValueError("schedule exhausted")
    s = session.grid.times[i]
    if not session.switched:
        raise ValueError("switch_to_global must run before late steps")
    if is_region_phase(s, session.policy):
        raise ValueError(f"step at s={s} is still in the regional phase")
    s_next = session.grid.times[i + 1]
    ds = s - s_next
    _advance(session, session.global_branch, s, ds)
    session.tokens_global_phase += session.global_branch.tokens_per_step
    fused = _fuse_late(session, session.global_branch.latent, s_next)
    session.global_branch.latent = fused
    session.step_index = i + 1
    _record(session, i + 1, fused)
    return fused


def finalize(session: EditSession) -> EditResult:
    """Apply the s=0 pinning merge, decode, and assemble the report."""
    if session.step_index != session.steps:
        raise ValueError(
            f"finalize before schedule end (step {session.step_index} of {session.steps})"
        )
    final = session.last_fused
    if session.policy.strategy != "no_background":
        final = masked_blend(
            reference_latent(session.z0, session.noise, 0.0), final, session.union
        )
    if session.record_trace and session.trace:
        last = session.trace[-1]
        session.trace[-1] = TraceEntry(
            index=last.index, s=last.s, phase=last.phase, fused=final,
            branch_tokens=last.branch_tokens,
        )
    steps_region = region_step_count(session.grid, session.policy)
    report = RunReport(
        backend_name=str(session.backend.descriptor().get("name", "unknown")),
        steps_total=session.steps,
        steps_region=steps_region,
        steps_global=session.steps - steps_region,
        rho=session.policy.rho,
        strategy=session.policy.strategy,
        seed=session.seed,
        region_count=len(session.region_branches),
        tokens_per_step_global=session.global_branch.tokens_per_step,
        tokens_per_step_regions=_branch_tokens(session),
        tokens_region_phase=session.tokens_region_phase,
        tokens_region_phase_baseline=steps_region * session.global_branch.tokens_per_step,
        tokens_global_phase=session.tokens_global_phase,
    )
    return EditResult(
        image=session.backend.decode(final),
        latent=final,
        report=report,
        trace=tuple(session.trace),
    )


def run_session(session: EditSession) -> EditResult:
    """Drive a session through its whole schedule and finalize."""
    start = time.perf_counter()
    while session.step_index < session.steps:
        s = session.grid.times[session.step_index]
        if not session.switched and is_region_phase(s, session.policy):
            run_early_step(session)
        else:
            if not session.switched:
                switch_to_global(session)
            run_late_step(session)
    if not session.switched:
        # rho=0: the whole schedule was regional; mark the handoff anyway so
        # the session state is terminal-consistent.
        switch_to_global(session)
    result = finalize(session)
    result.report.inference_seconds = time.perf_counter() - start
    return result


def run_edit(
    reference: PixelImage,
    instruction: str,
    regions: tuple[RegionInstance, ...] | list[RegionInstance],
    backend: DenoiserBackend,
    steps: int = 50,
    rho: float = 0.6,
    strategy: str = "both",
    seed: int = 0,
    record_trace: bool = True,
) -> EditResult:
    """Convenience wrapper: build grid/policy/session and run end to end."""
    session = init_session(
        reference,
        instruction,
        regions,
        backend,
        grid=make_time_grid(steps),
        policy=SwitchPolicy(rho=rho, strategy=strategy),
        seed=seed,
        record_trace=record_trace,
    )
    return run_session(session)
