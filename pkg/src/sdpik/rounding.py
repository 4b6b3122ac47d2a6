"""Recovery of joint angles from a solved relaxation, plus the full pipeline.

A tight relaxation returns rank-one lift blocks whose rotation vectors are
exact; with noise or a small relaxation gap they are only nearly rotations.
Rounding projects each relative rotation to SO(3) with an SVD, reads the
joint angle off the canonical axis frame, clamps it into the limit interval,
and hands the result to the local refiner, which converges in a few steps
when the relaxation was (nearly) tight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic_solver import SolverOptions, SolverReport, solve, solve_external
from .kinematics import Observation, ParamVector, Skeleton, axis_frame
from .local_ik import PenaltyConfig, ik_cost, solve_local
from .sdp_relaxation import VariableLayout, build_sdp, unvec_rotation

__all__ = ["IKResult", "project_so3", "extract_angles", "sdp_ik"]


def project_so3(M: np.ndarray, return_ambiguity: bool = False):
    """Orthogonal projection of a 3x3 matrix onto the rotation group.

    Returns U diag(1, 1, det(U V^T)) V^T from the SVD M = U S V^T, the
    Frobenius-nearest proper rotation.  With ``return_ambiguity`` a flag is
    added marking inputs whose nearest rotation is not unique: a tied pair of
    smallest singular values under a reflection, or a (near) rank-one input.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {M.shape}")
    U, sigma, Vt = np.linalg.svd(M)
    det_sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    R = U @ np.diag([1.0, 1.0, det_sign]) @ Vt
    if not return_ambiguity:
        return R
    scale = max(1.0, float(sigma[0]))
    if det_sign < 0:
        ambiguous = (sigma[1] - sigma[2]) <= 1e-9 * scale
    else:
        ambiguous = (sigma[1] + sigma[2]) <= 1e-9 * scale
    return R, bool(ambiguous)


def _clamp_angle(theta: float, limits: tuple[float, float]) -> float:
    """Representative of theta (mod 2 pi) inside [lo, hi], or the nearest endpoint."""
    lo, hi = limits
    candidates = (theta, theta + 2.0 * np.pi, theta - 2.0 * np.pi)
    for cand in candidates:
        if lo <= cand <= hi:
            return float(cand)
    best = lo
    best_dist = np.inf
    for cand in candidates:
        for endpoint in (lo, hi):
            dist = abs(cand - endpoint)
            if dist < best_dist:
                best_dist = dist
                best = endpoint
    return float(best)


def extract_angles(skeleton: Skeleton, x: np.ndarray, layout: VariableLayout) -> ParamVector:
    """Round a relaxation solution to a valid parameter vector.

    Each relative rotation vector is projected to SO(3), conjugated into the
    canonical frame where the joint spins about the x axis, and its angle
    read off and clamped into the joint's interval.  Fixed joints get angle
    zero; the translation is taken directly.
    """
    theta = np.zeros(skeleton.n_joints)
    for joint in skeleton.joints:
        if joint.fixed:
            continue
        j = joint.id - 1
        rel = project_so3(unvec_rotation(x[layout.r_rel[j]]))
        S = axis_frame(joint.axis)
        canonical = S @ rel @ S.T
        angle = float(np.arctan2(canonical[2, 1], canonical[1, 1]))
        theta[j] = _clamp_angle(angle, joint.limits)
    return ParamVector(t=np.array(x[layout.t], dtype=float), theta=theta)


@dataclass(eq=False)
class IKResult:
    """Outcome of the relax-round-refine pipeline.

    ``sdp_bound`` is the relaxation's optimal value, a lower bound on the
    sum of squared target distances over all limit-respecting poses.
    ``rounded_cost`` and ``refined_cost`` are RMS target distances before and
    after local refinement; ``tightness_gap`` is the refined sum of squares
    minus the bound, zero exactly when the relaxation was tight and the
    rounded pose globally optimal.
    """

    theta: ParamVector
    sdp_bound: float
    rounded_cost: float
    refined_cost: float
    tightness_gap: float
    diagnostics: dict = field(default_factory=dict)


def sdp_ik(
    skeleton: Skeleton,
    observation: Observation,
    solver_options: SolverOptions | None = None,
    local_config: PenaltyConfig | None = None,
    external_command: str | None = None,
) -> IKResult:
    """Solve IK by relaxation, rounding, and local refinement.

    ``external_command`` delegates the SDP solve to an external process via
    the SDPA bridge; by default the embedded solver runs.  Refinement uses
    the trust-region method under the standard penalty weight unless a
    config is supplied.
    """
    program, layout = build_sdp(skeleton, observation)
    if external_command is not None:
        report: SolverReport = solve_external(program, external_command, solver_options)
    else:
        report = solve(program, solver_options)

    rounded = extract_angles(skeleton, report.x, layout)
    rounded_cost = ik_cost(skeleton, observation, rounded)

    config = local_config or PenaltyConfig()
    local = solve_local(skeleton, observation, rounded, config)

    n_obs = len(observation.joints)
    refined_sq = local.ik_cost**2 * n_obs
    return IKResult(
        theta=local.theta,
        sdp_bound=report.objective,
        rounded_cost=rounded_cost,
        refined_cost=local.ik_cost,
        tightness_gap=refined_sq - report.objective,
        diagnostics={
            "solver_status": report.status,
            "solver_iterations": report.iterations,
            "solver_gap": report.gap,
            "solver_primal_infeasibility": report.primal_infeasibility,
            "solver_dual_infeasibility": report.dual_infeasibility,
            "solver_wall_time": report.wall_time,
            "solver_message": report.message,
            "local_method": local.method,
            "local_iterations": local.iterations,
            "local_converged": local.converged,
            "local_violation": local.violation,
        },
    )
