"""Training-free multi-instance image editing by regional latent fusion.

The package splits a compositional edit instruction into grounded per-region
sub-edits, denoises each region in its own branch, and fuses the branches
into one latent on a two-stage schedule while the background stays pinned to
the reference image's forward-noising trajectory.
"""

from .backend import Condition, DenoiserBackend
from .geometry import (
    BoundingBox,
    LatentMask,
    RegionInstance,
    box_to_latent_mask,
    crop,
    crop_latent,
    make_region_instance,
    mask_union,
    pad_to_multiple,
    place,
)
from .grids import (
    LatentGrid,
    NoiseField,
    PixelImage,
    lerp,
    masked_blend,
    patch_token_count,
    sample_noise,
)
from .oracle import (
    IdentityCodec,
    OracleBackend,
    PoolingCodec,
    ToyEditOp,
    apply_toy_op,
    make_oracle_backend,
    parse_toy_instruction,
    resolve_target,
)
from .scenes import (
    SceneObject,
    SceneResolver,
    SyntheticScene,
    detect_rectangles,
    make_scene_oracle,
    make_squares_scene,
    resolve_position,
    stub_ground,
)
from .schedule import (
    DEFAULT_RHO,
    DEFAULT_STEPS,
    SINGLE_INSTRUCTION_RHO,
    STRATEGIES,
    SwitchPolicy,
    TimeGrid,
    euler_step,
    is_region_phase,
    make_time_grid,
    reference_latent,
    region_step_count,
)
from .session import (
    Branch,
    EditResult,
    EditSession,
    RunReport,
    TraceEntry,
    finalize,
    init_session,
    run_early_step,
    run_edit,
    run_late_step,
    run_session,
    switch_to_global,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Condition",
    "DenoiserBackend",
    "BoundingBox",
    "LatentMask",
    "RegionInstance",
    "box_to_latent_mask",
    "crop",
    "crop_latent",
    "make_region_instance",
    "mask_union",
    "pad_to_multiple",
    "place",
    "LatentGrid",
    "NoiseField",
    "PixelImage",
    "lerp",
    "masked_blend",
    "patch_token_count",
    "sample_noise",
    "IdentityCodec",
    "OracleBackend",
    "PoolingCodec",
    "ToyEditOp",
    "apply_toy_op",
    "make_oracle_backend",
    "parse_toy_instruction",
    "resolve_target",
    "SceneObject",
    "SceneResolver",
    "SyntheticScene",
    "detect_rectangles",
    "make_scene_oracle",
    "make_squares_scene",
    "resolve_position",
    "stub_ground",
    "DEFAULT_RHO",
    "DEFAULT_STEPS",
    "SINGLE_INSTRUCTION_RHO",
    "STRATEGIES",
    "SwitchPolicy",
    "TimeGrid",
    "euler_step",
    "is_region_phase",
    "make_time_grid",
    "reference_latent",
    "region_step_count",
    "Branch",
    "EditResult",
    "EditSession",
    "RunReport",
    "TraceEntry",
    "finalize",
    "init_session",
    "run_early_step",
    "run_edit",
    "run_late_step",
    "run_session",
    "switch_to_global",
]
