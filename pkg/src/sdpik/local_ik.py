"""Local inverse-kinematics solvers over the penalized position-fit objective.

The fit error for a pose is the root-mean-square distance between observed
targets and the corresponding joint positions.  Joint limits enter through a
quadratic penalty on the distance of each angle to its interval, so the
optimized objective is

    penalty(Theta) = sum_j ||y_j - x_j(Theta)||^2
                     + lambda * sum_i interval_distance(theta_i, I_i)^2

Two unconstrained solvers are provided: gradient descent with Armijo
backtracking and a Levenberg-Marquardt trust-region method on the stacked
residual vector.  Both are monotone in the accepted iterates and return the
best iterate seen.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .kinematics import (
    Observation,
    ParamVector,
    Skeleton,
    fk_jacobian,
    forward_kinematics,
    interval_distance,
)

__all__ = [
    "PenaltyConfig",
    "LocalResult",
    "ik_cost",
    "penalty_cost",
    "penalty_gradient",
    "solve_local",
    "random_init",
]

GRADIENT_DESCENT = "gradient-descent"
TRUST_REGION = "trust-region"

# Armijo sufficient-decrease constant for the line search.
_ARMIJO_C = 1e-4


@dataclass(frozen=True)
class PenaltyConfig:
    """Weights and termination thresholds shared by the local solvers.

    ``lam`` is the joint-limit penalty weight (lambda); translation components
    are never penalized.
    """

    lam: float = 100.0
    method: str = TRUST_REGION
    max_iterations: int = 2000
    time_budget: float = 30.0
    gradient_tolerance: float = 1e-9
    step_tolerance: float = 1e-12

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.method not in (GRADIENT_DESCENT, TRUST_REGION):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class LocalResult:
    theta: ParamVector
    penalty_cost: float
    ik_cost: float
    iterations: int
    converged: bool
    wall_time: float
    method: str = TRUST_REGION
    violation: float = 0.0


def ik_cost(skeleton: Skeleton, observation: Observation, params: ParamVector) -> float:
    """Root-mean-square distance between targets and observed joint positions."""
    observation.check_against(skeleton)
    positions = forward_kinematics(skeleton, params)
    err = observation.targets - positions[np.array(observation.joints) - 1]
    return math.sqrt(float(np.mean(np.sum(err * err, axis=1))))


def _fit_error_squared(skeleton, observation, params) -> float:
    positions = forward_kinematics(skeleton, params)
    err = observation.targets - positions[np.array(observation.joints) - 1]
    return float(np.sum(err * err))


def _limit_violations(skeleton: Skeleton, theta: np.ndarray) -> np.ndarray:
    out = np.zeros_like(theta)
    for j, joint in enumerate(skeleton.joints):
        out[j] = interval_distance(float(theta[j]), joint.limits)
    return out


def penalty_cost(skeleton: Skeleton, observation: Observation, params: ParamVector, lam: float = 100.0) -> float:
    """Squared fit error plus lambda times the squared joint-limit violations."""
    observation.check_against(skeleton)
    violations = _limit_violations(skeleton, params.theta)
    return _fit_error_squared(skeleton, observation, params) + lam * float(np.dot(violations, violations))


def penalty_gradient(
    skeleton: Skeleton, observation: Observation, params: ParamVector, lam: float = 100.0
) -> np.ndarray:
    """Gradient of ``penalty_cost`` w.r.t. the flat parameter vector (t, theta)."""
    observation.check_against(skeleton)
    positions = forward_kinematics(skeleton, params)
    residual = (positions[np.array(observation.joints) - 1] - observation.targets).reshape(-1)
    jac = fk_jacobian(skeleton, params, observation)
    grad = 2.0 * (jac.T @ residual)
    for j, joint in enumerate(skeleton.joints):
        if joint.fixed:
            continue
        lo, hi = joint.limits
        th = params.theta[j]
        if th > hi:
            grad[3 + j] += 2.0 * lam * (th - hi)
        elif th < lo:
            grad[3 + j] += 2.0 * lam * (th - lo)
    return grad


def random_init(skeleton: Skeleton, seed: int, translation_halfwidth: float | None = None) -> ParamVector:
    """Random starting pose: per-joint uniform angles inside the limits, then a
    uniform translation in a centered box.

    The box half-width defaults to the total bone length of the skeleton.
    Fixed joints are pinned to 0 and consume no random draws; draw order is
    angles in joint order, then the three translation components.
    """
    rng = np.random.default_rng(seed)
    theta = np.zeros(skeleton.n_joints)
    for j, joint in enumerate(skeleton.joints):
        if joint.fixed:
            continue
        theta[j] = rng.uniform(joint.limits[0], joint.limits[1])
    if translation_halfwidth is None:
        translation_halfwidth = skeleton.total_bone_length()
    if translation_halfwidth <= 0.0:
        translation_halfwidth = 1.0
    t = rng.uniform(-translation_halfwidth, translation_halfwidth, size=3)
    return ParamVector(t=t, theta=theta)


# ===== solvers =====


def _fixed_mask(skeleton: Skeleton) -> np.ndarray:
    mask = np.zeros(skeleton.n_params, dtype=bool)
    for j, joint in enumerate(skeleton.joints):
        if joint.fixed:
            mask[3 + j] = True
    return mask


def _pin_fixed(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = values.copy()
    out[mask] = 0.0
    return out


def _residuals_and_jacobian(skeleton, observation, values, lam, mask, with_jacobian=True):
    """Stacked residual [x_obs - y; sqrt(lam) * limit violation] and its Jacobian."""
    params = ParamVector.from_array(values)
    positions = forward_kinematics(skeleton, params)
    pos_res = (positions[np.array(observation.joints) - 1] - observation.targets).reshape(-1)
    sqrt_lam = math.sqrt(lam)
    n_joints = skeleton.n_joints
    lim_res = np.zeros(n_joints)
    lim_sign = np.zeros(n_joints)
    for j, joint in enumerate(skeleton.joints):
        if joint.fixed:
            continue
        lo, hi = joint.limits
        th = values[3 + j]
        if th > hi:
            lim_res[j] = sqrt_lam * (th - hi)
            lim_sign[j] = 1.0
        elif th < lo:
            lim_res[j] = sqrt_lam * (th - lo)
            lim_sign[j] = 1.0
    residual = np.concatenate([pos_res, lim_res])
    if not with_jacobian:
        return residual, None
    jac_pos = fk_jacobian(skeleton, params, observation)
    jac_lim = np.zeros((n_joints, skeleton.n_params))
    for j in range(n_joints):
        if lim_sign[j]:
            jac_lim[j, 3 + j] = sqrt_lam
    jac = np.vstack([jac_pos, jac_lim])
    jac[:, mask] = 0.0
    return residual, jac


def _solve_trust_region(skeleton, observation, x0, config, deadline):
    """Levenberg-Marquardt with a gain-ratio damping update.

    Steps with positive gain ratio are accepted and the damping halves
    (trust region grows by 2); rejected steps multiply the damping by 4
    (trust region shrinks by 0.25).
    """
    mask = _fixed_mask(skeleton)
    x = _pin_fixed(x0, mask)
    residual, jac = _residuals_and_jacobian(skeleton, observation, x, config.lam, mask)
    cost = float(residual @ residual)
    best_x, best_cost = x, cost
    mu = None
    iterations = 0
    converged = False
    n = x.size
    while iterations < config.max_iterations:
        if time.monotonic() > deadline:
            break
        grad = 2.0 * (jac.T @ residual)
        if np.max(np.abs(grad)) <= config.gradient_tolerance:
            converged = True
            break
        hess = jac.T @ jac
        if mu is None:
            mu = 1e-3 * max(np.max(np.diag(hess)), 1e-12)
        try:
            step = np.linalg.solve(hess + mu * np.eye(n), -0.5 * grad)
        except np.linalg.LinAlgError:
            mu *= 4.0
            iterations += 1
            continue
        step = _pin_fixed(step, mask)
        if np.linalg.norm(step) <= config.step_tolerance * (np.linalg.norm(x) + config.step_tolerance):
            converged = True
            break
        x_new = x + step
        new_residual, _ = _residuals_and_jacobian(skeleton, observation, x_new, config.lam, mask, with_jacobian=False)
        new_cost = float(new_residual @ new_residual)
        predicted = float(step @ (mu * step - 0.5 * grad))
        gain = (cost - new_cost) / max(predicted, 1e-300)
        iterations += 1
        if gain > 0.0 and new_cost < cost:
            x, cost = x_new, new_cost
            residual, jac = _residuals_and_jacobian(skeleton, observation, x, config.lam, mask)
            if cost < best_cost:
                best_x, best_cost = x, cost
            mu = max(mu * 0.5, 1e-14)
        else:
            mu *= 4.0
            if mu > 1e16:
                break
    return best_x, best_cost, iterations, converged


def _solve_gradient_descent(skeleton, observation, x0, config, deadline):
    """Steepest descent with Armijo backtracking (halving steps)."""
    mask = _fixed_mask(skeleton)
    x = _pin_fixed(x0, mask)

    def cost_at(values):
        return penalty_cost(skeleton, observation, ParamVector.from_array(values), config.lam)

    cost = cost_at(x)
    best_x, best_cost = x, cost
    step_size = 1.0
    iterations = 0
    converged = False
    while iterations < config.max_iterations:
        if time.monotonic() > deadline:
            break
        grad = penalty_gradient(skeleton, observation, ParamVector.from_array(x), config.lam)
        grad = _pin_fixed(grad, mask)
        grad_norm_sq = float(grad @ grad)
        if math.sqrt(grad_norm_sq) <= config.gradient_tolerance:
            converged = True
            break
        # Try to grow the step back after successful iterations.
        step_size = min(step_size * 2.0, 1e6)
        while True:
            x_new = x - step_size * grad
            if cost_at(x_new) <= cost - _ARMIJO_C * step_size * grad_norm_sq:
                break
            step_size *= 0.5
            if step_size * math.sqrt(grad_norm_sq) < config.step_tolerance:
                break
        step_norm = step_size * math.sqrt(grad_norm_sq)
        if step_norm < config.step_tolerance:
            converged = True
            break
        x = x_new
        cost = cost_at(x)
        iterations += 1
        if cost < best_cost:
            best_x, best_cost = x, cost
    return best_x, best_cost, iterations, converged


def solve_local(
    skeleton: Skeleton,
    observation: Observation,
    init: ParamVector,
    config: PenaltyConfig | None = None,
) -> LocalResult:
    """Minimize the penalized objective from ``init`` with the configured method.

    The accepted iterates are monotone non-increasing in penalty cost and the
    returned pose is never worse than the initialization.
    """
    observation.check_against(skeleton)
    if config is None:
        config = PenaltyConfig()
    if init.theta.shape[0] != skeleton.n_joints:
        raise ValueError(f"init has {init.theta.shape[0]} angles for {skeleton.n_joints} joints")
    start = time.monotonic()
    deadline = start + config.time_budget
    solver = _solve_trust_region if config.method == TRUST_REGION else _solve_gradient_descent
    x, cost, iterations, converged = solver(skeleton, observation, init.as_array(), config, deadline)
    params = ParamVector.from_array(x)
    return LocalResult(
        theta=params,
        penalty_cost=cost,
        ik_cost=ik_cost(skeleton, observation, params),
        iterations=iterations,
        converged=converged,
        wall_time=time.monotonic() - start,
        method=config.method,
        violation=float(np.sum(_limit_violations(skeleton, params.theta))),
    )
