"""Shared skeleton factories and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np

from sdpik.kinematics import (
    Joint,
    Observation,
    ParamVector,
    RawDof,
    RawJoint,
    RawSkeleton,
    Skeleton,
)

AXES = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}


def make_chain(axes, bones=None, limits=None, name="chain") -> Skeleton:
    """Serial chain; ``axes`` is a list of 'x'/'y'/'z'/vectors, ``limits`` per joint or shared."""
    n = len(axes)
    if bones is None:
        bones = [(1.0, 0.0, 0.0)] * n
    if limits is None:
        limits = [(-np.pi, np.pi)] * n
    elif isinstance(limits, tuple):
        limits = [limits] * n
    joints = []
    for k in range(n):
        axis = AXES[axes[k]] if isinstance(axes[k], str) else np.asarray(axes[k], dtype=float)
        joints.append(
            Joint(id=k + 1, parent=k, axis=axis, bone=np.asarray(bones[k], dtype=float), limits=limits[k])
        )
    return Skeleton(joints=tuple(joints), name=name)


def random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_skeleton(rng, max_joints=10, allow_fixed=True) -> Skeleton:
    """Random tree with random axes, bones, limits, and optional fixed leaves."""
    n = int(rng.integers(1, max_joints + 1))
    joints = []
    for k in range(1, n + 1):
        parent = 0 if k == 1 else int(rng.integers(1, k))
        fixed = allow_fixed and k > 1 and rng.random() < 0.2
        if fixed:
            limits = None
        else:
            lo = float(rng.uniform(-np.pi, 0.5))
            hi = float(rng.uniform(lo + 0.3, min(lo + 2 * np.pi, np.pi)))
            limits = (lo, hi)
        joints.append(
            Joint(
                id=k,
                parent=parent,
                axis=random_unit(rng),
                bone=rng.uniform(-1.0, 1.0, size=3),
                limits=limits,
            )
        )
    return Skeleton(joints=tuple(joints), name="random")


def random_params(skeleton: Skeleton, rng, respect_limits=False, t_scale=1.0) -> ParamVector:
    theta = np.empty(skeleton.n_joints)
    for j, joint in enumerate(skeleton.joints):
        if joint.fixed:
            theta[j] = 0.0
        elif respect_limits:
            theta[j] = rng.uniform(joint.limits[0], joint.limits[1])
        else:
            theta[j] = rng.uniform(-np.pi, np.pi)
    return ParamVector(t=rng.uniform(-t_scale, t_scale, size=3), theta=theta)


def observe_all(skeleton: Skeleton, params: ParamVector) -> Observation:
    from sdpik.kinematics import forward_kinematics

    positions = forward_kinematics(skeleton, params)
    return Observation(joints=tuple(range(1, skeleton.n_joints + 1)), targets=positions)


# ---- independent oracles -------------------------------------------------


def oracle_rotation(axis, angle) -> np.ndarray:
    """Rotation matrix via the matrix exponential of the scaled cross-product matrix."""
    from scipy.linalg import expm

    axis = np.asarray(axis, dtype=float)
    cross = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return expm(angle * cross)


def oracle_raw_fk(raw: RawSkeleton, theta_by_joint: dict[int, list[float]], t) -> dict[int, np.ndarray]:
    """Direct evaluation of the raw multi-DOF transform chain.

    Each raw joint contributes T(a_1, th_1) ... T(a_k, th_k) with zero offsets
    on all but the last factor, which carries the bone.  Returns the position
    of every raw joint by id.
    """

    def homogeneous(axis, angle, offset):
        out = np.eye(4)
        out[:3, :3] = oracle_rotation(axis, angle)
        out[:3, 3] = offset
        return out

    transforms = {}
    for joint in raw.joints:
        chain = np.eye(4)
        angles = theta_by_joint.get(joint.id, [])
        if joint.dofs:
            for pos, dof in enumerate(joint.dofs):
                offset = joint.bone if pos == len(joint.dofs) - 1 else np.zeros(3)
                chain = chain @ homogeneous(dof.axis, angles[pos], offset)
        else:
            chain[:3, 3] = joint.bone
        transforms[joint.id] = chain

    anchor = np.eye(4)
    anchor[:3, 3] = np.asarray(t, dtype=float)
    world: dict[int, np.ndarray] = {}
    accumulated: dict[int, np.ndarray] = {0: anchor}

    remaining = list(raw.joints)
    while remaining:
        progressed = False
        for joint in list(remaining):
            if joint.parent in accumulated:
                accumulated[joint.id] = accumulated[joint.parent] @ transforms[joint.id]
                world[joint.id] = accumulated[joint.id][:3, 3].copy()
                remaining.remove(joint)
                progressed = True
        if not progressed:
            raise AssertionError("oracle could not order raw joints")
    return world


def finite_difference_jacobian(func, x, h=1e-6) -> np.ndarray:
    """Central finite differences of a vector-valued function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        jac[:, i] = (np.asarray(func(x + step)) - np.asarray(func(x - step))) / (2.0 * h)
    return jac
