"""Inverse kinematics on joint-limited kinematic trees via a semidefinite relaxation."""

from .assets import builtin_skeleton, generate_poses, mini_body, mini_hand, shipped_poses
from .conic_solver import (
    ConicProgram,
    ProgramBuilder,
    PsdBlock,
    SolverOptions,
    SolverReport,
    read_sdpa,
    solve,
    solve_external,
    write_sdpa,
)
from .kinematics import (
    Joint,
    Observation,
    ParamVector,
    RawDof,
    RawJoint,
    RawSkeleton,
    Skeleton,
    axis_frame,
    fk_jacobian,
    forward_kinematics,
    forward_kinematics_product,
    global_rotations,
    interval_distance,
    load_skeleton,
    normalize_skeleton,
    rodrigues,
    save_skeleton,
)
from .local_ik import (
    GRADIENT_DESCENT,
    TRUST_REGION,
    LocalResult,
    PenaltyConfig,
    ik_cost,
    penalty_cost,
    random_init,
    solve_local,
)
from .rounding import IKResult, extract_angles, project_so3, sdp_ik
from .sdp_relaxation import (
    EmbedReport,
    VariableLayout,
    block_census,
    build_sdp,
    embed_ground_truth,
)

__version__ = "0.1.0"

__all__ = [
    "Joint",
    "Observation",
    "ParamVector",
    "RawDof",
    "RawJoint",
    "RawSkeleton",
    "Skeleton",
    "axis_frame",
    "fk_jacobian",
    "forward_kinematics",
    "forward_kinematics_product",
    "global_rotations",
    "interval_distance",
    "load_skeleton",
    "normalize_skeleton",
    "rodrigues",
    "save_skeleton",
    "GRADIENT_DESCENT",
    "TRUST_REGION",
    "LocalResult",
    "PenaltyConfig",
    "ik_cost",
    "penalty_cost",
    "random_init",
    "solve_local",
    "ConicProgram",
    "ProgramBuilder",
    "PsdBlock",
    "SolverOptions",
    "SolverReport",
    "read_sdpa",
    "solve",
    "solve_external",
    "write_sdpa",
    "EmbedReport",
    "VariableLayout",
    "block_census",
    "build_sdp",
    "embed_ground_truth",
    "IKResult",
    "extract_angles",
    "project_so3",
    "sdp_ik",
    "builtin_skeleton",
    "generate_poses",
    "mini_body",
    "mini_hand",
    "shipped_poses",
    "__version__",
]
