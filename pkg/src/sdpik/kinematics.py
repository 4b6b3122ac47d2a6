"""Kinematic trees of one-DOF revolute joints.

A skeleton is a tree of joints rooted at joint 1.  Every joint carries a
rotation axis, a bone vector (its offset in the parent frame), and either an
angle interval or the marker ``fixed`` for 0-DOF end effectors.  The global
pose is parameterized by a root translation plus one angle per joint.

Skeletons whose joints bundle several rotational DOF are supported through
``normalize_skeleton``, which splits each multi-DOF joint into a chain of
single-axis joints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Joint",
    "Skeleton",
    "RawDof",
    "RawJoint",
    "RawSkeleton",
    "ParamVector",
    "Observation",
    "skew",
    "rodrigues",
    "local_transform",
    "axis_frame",
    "forward_kinematics",
    "forward_kinematics_product",
    "global_rotations",
    "fk_jacobian",
    "interval_distance",
    "normalize_skeleton",
    "load_skeleton",
    "save_skeleton",
    "skeleton_from_dict",
    "skeleton_to_dict",
]

# Minimum axis norm accepted before renormalization is considered meaningless.
_AXIS_NORM_FLOOR = 1e-6
# Full circle with slack; wider intervals behave as unlimited joints.
_FULL_CIRCLE = 2.0 * math.pi + 1e-12

DEFAULT_LIMITS = (-math.pi, math.pi)


def _vector3(value, *, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    out = arr.copy()
    out.setflags(write=False)
    return out


def _unit_axis(value) -> np.ndarray:
    axis = np.asarray(value, dtype=float)
    if axis.shape != (3,):
        raise ValueError(f"axis must be a 3-vector, got shape {axis.shape}")
    norm = float(np.linalg.norm(axis))
    if not math.isfinite(norm) or norm < _AXIS_NORM_FLOOR:
        raise ValueError(f"axis norm {norm} is below {_AXIS_NORM_FLOOR}; cannot renormalize")
    out = axis / norm
    out.setflags(write=False)
    return out


def _check_limits(limits) -> tuple[float, float]:
    lo, hi = float(limits[0]), float(limits[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"limits must be finite, got ({lo}, {hi})")
    if lo > hi:
        raise ValueError(f"limits must satisfy lo <= hi, got ({lo}, {hi})")
    if hi - lo > _FULL_CIRCLE:
        raise ValueError(f"limit interval wider than 2*pi: ({lo}, {hi})")
    return (lo, hi)


@dataclass(frozen=True, eq=False)
class Joint:
    """One-DOF revolute joint (or a fixed 0-DOF end effector).

    Attributes
    ----------
    id : int
        1-based joint index; parents always have smaller indices.
    parent : int
        Parent joint id, 0 for the root anchor.
    axis : ndarray, shape (3,)
        Unit rotation axis in the parent frame (ignored for fixed joints).
    bone : ndarray, shape (3,)
        Offset of this joint in the parent frame.
    limits : (float, float) or None
        Angle interval [lo, hi]; None marks a fixed joint.
    name : str
        Optional human-readable label.
    """

    id: int
    parent: int
    axis: np.ndarray
    bone: np.ndarray
    limits: tuple[float, float] | None
    name: str = ""

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"joint id must be >= 1, got {self.id}")
        if not (0 <= self.parent < self.id):
            raise ValueError(f"joint {self.id}: parent {self.parent} must lie in [0, {self.id})")
        object.__setattr__(self, "axis", _unit_axis(self.axis))
        object.__setattr__(self, "bone", _vector3(self.bone, name=f"joint {self.id} bone"))
        if self.limits is not None:
            object.__setattr__(self, "limits", _check_limits(self.limits))

    @property
    def fixed(self) -> bool:
        return self.limits is None


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Tree of one-DOF joints rooted at joint 1.

    ``clusters`` optionally records, per joint of the originating multi-DOF
    skeleton, the tuple of normalized joint ids it expanded into.
    """

    joints: tuple[Joint, ...]
    name: str = ""
    clusters: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        joints = tuple(self.joints)
        if not joints:
            raise ValueError("skeleton needs at least one joint")
        object.__setattr__(self, "joints", joints)
        for k, joint in enumerate(joints, start=1):
            if joint.id != k:
                raise ValueError(f"joint ids must be consecutive from 1, got {joint.id} at slot {k}")
        if joints[0].parent != 0:
            raise ValueError("joint 1 must attach to the root anchor (parent 0)")
        for joint in joints[1:]:
            if joint.parent == 0:
                raise ValueError(f"joint {joint.id} has parent 0; only joint 1 may anchor the tree")
        if self.clusters is not None:
            clusters = tuple(tuple(int(i) for i in group) for group in self.clusters)
            seen = [i for group in clusters for i in group]
            if sorted(seen) != list(range(1, len(joints) + 1)):
                raise ValueError("clusters must partition the joint ids")
            object.__setattr__(self, "clusters", clusters)

    def __len__(self) -> int:
        return len(self.joints)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_params(self) -> int:
        return 3 + len(self.joints)

    def joint(self, joint_id: int) -> Joint:
        return self.joints[joint_id - 1]

    def children(self, joint_id: int) -> tuple[int, ...]:
        return tuple(j.id for j in self.joints if j.parent == joint_id)

    def leaves(self) -> tuple[int, ...]:
        has_child = [False] * (len(self.joints) + 1)
        for joint in self.joints:
            if joint.parent >= 1:
                has_child[joint.parent] = True
        return tuple(j.id for j in self.joints if not has_child[j.id])

    def path_to_root(self, joint_id: int) -> tuple[int, ...]:
        """Joint ids from the root (joint 1, or the branch anchor) down to ``joint_id``."""
        path = []
        j = joint_id
        while j != 0:
            path.append(j)
            j = self.joints[j - 1].parent
        return tuple(reversed(path))

    def total_bone_length(self) -> float:
        return float(sum(np.linalg.norm(j.bone) for j in self.joints))

    def root_cluster(self) -> tuple[int, ...]:
        """Ids of the normalized joints that expand the original root joint."""
        if self.clusters is None:
            return (1,)
        for group in self.clusters:
            if 1 in group:
                return group
        return (1,)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Pose parameters: root translation ``t`` plus one angle per joint."""

    t: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _vector3(self.t, name="t"))
        theta = np.asarray(self.theta, dtype=float).copy()
        if theta.ndim != 1:
            raise ValueError(f"theta must be 1-d, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def n_joints(self) -> int:
        return self.theta.shape[0]

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.t, self.theta])

    @classmethod
    def from_array(cls, values) -> "ParamVector":
        values = np.asarray(values, dtype=float)
        return cls(t=values[:3], theta=values[3:])

    @classmethod
    def zeros(cls, n_joints: int) -> "ParamVector":
        return cls(t=np.zeros(3), theta=np.zeros(n_joints))


@dataclass(frozen=True, eq=False)
class Observation:
    """Target positions for a subset of joints, kept sorted by joint id."""

    joints: tuple[int, ...]
    targets: np.ndarray

    def __post_init__(self):
        joints = tuple(int(j) for j in self.joints)
        targets = np.asarray(self.targets, dtype=float).reshape(len(joints), 3).copy()
        if not joints:
            raise ValueError("observation must contain at least one joint")
        if len(set(joints)) != len(joints):
            raise ValueError(f"observed joint ids must be distinct, got {joints}")
        if min(joints) < 1:
            raise ValueError("observed joint ids must be >= 1")
        if not np.all(np.isfinite(targets)):
            raise ValueError("targets must be finite")
        order = np.argsort(joints, kind="stable")
        joints = tuple(joints[i] for i in order)
        targets = targets[order]
        targets.setflags(write=False)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return len(self.joints)

    def items(self):
        return zip(self.joints, self.targets)

    @classmethod
    def from_pairs(cls, pairs) -> "Observation":
        pairs = list(pairs)
        return cls(joints=tuple(int(j) for j, _ in pairs), targets=np.array([y for _, y in pairs], dtype=float))

    def check_against(self, skeleton: Skeleton) -> None:
        if max(self.joints) > skeleton.n_joints:
            raise ValueError(f"observed joint {max(self.joints)} not in skeleton of {skeleton.n_joints} joints")


# ===== elementary rotations =====


def skew(v) -> np.ndarray:
    """Cross-product matrix [v]x with skew(v) @ u == cross(v, u)."""
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rodrigues(axis, angle: float) -> np.ndarray:
    """Rotation by ``angle`` about a unit ``axis``.

    K = I + sin(angle) [a]x + (1 - cos(angle)) [a]x^2.
    """
    axis = np.asarray(axis, dtype=float)
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"rodrigues needs a unit axis, got norm {norm}")
    cross = skew(axis)
    return np.eye(3) + math.sin(angle) * cross + (1.0 - math.cos(angle)) * (cross @ cross)


def local_transform(joint: Joint, angle: float) -> np.ndarray:
    """Homogeneous transform of ``joint``: rotation about its axis, offset by its bone."""
    out = np.eye(4)
    if not joint.fixed:
        out[:3, :3] = rodrigues(joint.axis, angle)
    out[:3, 3] = joint.bone
    return out


def axis_frame(axis) -> np.ndarray:
    """Rotation S with S @ axis == e_x, used to conjugate onto the canonical x-axis.

    The completion is deterministic: the identity for axis == e_x, a rotation
    by pi about e_z for axis == -e_x, and otherwise the minimal rotation
    carrying ``axis`` onto e_x.
    """
    axis = np.asarray(axis, dtype=float)
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"axis_frame needs a unit axis, got norm {norm}")
    e_x = np.array([1.0, 0.0, 0.0])
    w = np.cross(axis, e_x)
    sin_angle = float(np.linalg.norm(w))
    if sin_angle < 1e-12:
        if axis[0] > 0.0:
            return np.eye(3)
        return np.diag([-1.0, -1.0, 1.0])
    angle = math.atan2(sin_angle, float(axis[0]))
    return rodrigues(w / sin_angle, angle)


# ===== forward kinematics =====


def _fk_positions_rotations(skeleton: Skeleton, params: ParamVector) -> tuple[np.ndarray, np.ndarray]:
    n = skeleton.n_joints
    if params.theta.shape[0] != n:
        raise ValueError(f"expected {n} angles, got {params.theta.shape[0]}")
    positions = np.empty((n, 3))
    rotations = np.empty((n, 3, 3))
    for joint in skeleton.joints:
        k = joint.id - 1
        if joint.parent == 0:
            parent_pos, parent_rot = params.t, np.eye(3)
        else:
            parent_pos, parent_rot = positions[joint.parent - 1], rotations[joint.parent - 1]
        positions[k] = parent_pos + parent_rot @ joint.bone
        if joint.fixed:
            rotations[k] = parent_rot
        else:
            rotations[k] = parent_rot @ rodrigues(joint.axis, params.theta[k])
    return positions, rotations


def forward_kinematics(skeleton: Skeleton, params: ParamVector) -> np.ndarray:
    """Joint positions, shape (J, 3), via the parent-to-child recursion."""
    positions, _ = _fk_positions_rotations(skeleton, params)
    return positions


def global_rotations(skeleton: Skeleton, params: ParamVector) -> np.ndarray:
    """Global joint rotations, shape (J, 3, 3); R_j = R_parent(j) @ R_j^rel."""
    _, rotations = _fk_positions_rotations(skeleton, params)
    return rotations


def forward_kinematics_product(skeleton: Skeleton, params: ParamVector) -> np.ndarray:
    """Joint positions via explicit homogeneous transform products along root paths.

    Slower than ``forward_kinematics`` by design; the two must agree to
    within 1e-12 and are cross-checked in the tests.
    """
    n = skeleton.n_joints
    if params.theta.shape[0] != n:
        raise ValueError(f"expected {n} angles, got {params.theta.shape[0]}")
    anchor = np.eye(4)
    anchor[:3, 3] = params.t
    positions = np.empty((n, 3))
    origin = np.array([0.0, 0.0, 0.0, 1.0])
    for joint in skeleton.joints:
        product = anchor.copy()
        for j in skeleton.path_to_root(joint.id):
            product = product @ local_transform(skeleton.joint(j), params.theta[j - 1])
        positions[joint.id - 1] = (product @ origin)[:3]
    return positions


def fk_jacobian(skeleton: Skeleton, params: ParamVector, observation: Observation) -> np.ndarray:
    """Jacobian of stacked observed positions w.r.t. (t, theta), shape (3n, 3+J).

    Translation columns are identity blocks; the column for angle theta_i is
    cross(world_axis_i, x_j - p_i) whenever joint i lies on the root path of
    the observed joint j, and zero otherwise (fixed joints contribute zero).
    """
    observation.check_against(skeleton)
    positions, rotations = _fk_positions_rotations(skeleton, params)
    n_obs = len(observation)
    jac = np.zeros((3 * n_obs, skeleton.n_params))

    world_axes = np.empty((skeleton.n_joints, 3))
    for joint in skeleton.joints:
        if joint.fixed:
            continue
        parent_rot = np.eye(3) if joint.parent == 0 else rotations[joint.parent - 1]
        world_axes[joint.id - 1] = parent_rot @ joint.axis

    for row, (j, _target) in enumerate(observation.items()):
        rows = slice(3 * row, 3 * row + 3)
        jac[rows, 0:3] = np.eye(3)
        x_j = positions[j - 1]
        for i in skeleton.path_to_root(j):
            if skeleton.joint(i).fixed:
                continue
            jac[rows, 3 + i - 1] = np.cross(world_axes[i - 1], x_j - positions[i - 1])
    return jac


def interval_distance(angle: float, limits: tuple[float, float] | None) -> float:
    """Distance from ``angle`` to the interval ``[lo, hi]`` (0 inside; 0 for fixed joints)."""
    if limits is None:
        return 0.0
    lo, hi = limits
    if angle < lo:
        return lo - angle
    if angle > hi:
        return angle - hi
    return 0.0


# ===== multi-DOF normalization =====


@dataclass(frozen=True, eq=False)
class RawDof:
    axis: np.ndarray
    limits: tuple[float, float] = DEFAULT_LIMITS

    def __post_init__(self):
        object.__setattr__(self, "axis", _unit_axis(self.axis))
        object.__setattr__(self, "limits", _check_limits(self.limits))


@dataclass(frozen=True, eq=False)
class RawJoint:
    """Joint of a raw skeleton: up to three rotational DOF plus a bone vector."""

    id: int
    parent: int
    dofs: tuple[RawDof, ...]
    bone: np.ndarray
    name: str = ""

    def __post_init__(self):
        dofs = tuple(self.dofs)
        if len(dofs) > 3:
            raise ValueError(f"raw joint {self.id}: at most 3 DOF supported, got {len(dofs)}")
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "bone", _vector3(self.bone, name=f"raw joint {self.id} bone"))


@dataclass(frozen=True, eq=False)
class RawSkeleton:
    joints: tuple[RawJoint, ...]
    name: str = ""

    def __post_init__(self):
        joints = tuple(self.joints)
        if not joints:
            raise ValueError("raw skeleton needs at least one joint")
        ids = [j.id for j in joints]
        if len(set(ids)) != len(ids):
            raise ValueError("raw joint ids must be distinct")
        object.__setattr__(self, "joints", joints)


def normalize_skeleton(raw: RawSkeleton) -> Skeleton:
    """Split multi-DOF joints into chains of single-axis joints.

    A raw joint with axes (a_1, ..., a_k) becomes k chained joints whose
    rotations apply parent-to-child in declaration order; the first k-1 carry
    zero bone vectors and the last carries the original bone, so the combined
    transform is T(a_1, th_1) ... T(a_k, th_k) with the bone on the final
    factor.  Raw joints with no DOF become fixed joints.  Already one-DOF
    skeletons pass through unchanged (up to topological reindexing).
    """
    by_id = {j.id: j for j in raw.joints}
    roots = [j for j in raw.joints if j.parent == 0]
    if len(roots) != 1:
        raise ValueError(f"raw skeleton must have exactly one root, found {len(roots)}")
    for j in raw.joints:
        if j.parent != 0 and j.parent not in by_id:
            raise ValueError(f"raw joint {j.id} references missing parent {j.parent}")

    # Topological order; declaration order breaks ties so the result is stable.
    decl_index = {j.id: k for k, j in enumerate(raw.joints)}
    children: dict[int, list[int]] = {j.id: [] for j in raw.joints}
    for j in raw.joints:
        if j.parent != 0:
            children[j.parent].append(j.id)
    order: list[int] = []
    stack = [roots[0].id]
    while stack:
        jid = stack.pop()
        order.append(jid)
        for child in sorted(children[jid], key=decl_index.get, reverse=True):
            stack.append(child)
    if len(order) != len(raw.joints):
        raise ValueError("raw skeleton contains a cycle or unreachable joints")

    joints: list[Joint] = []
    clusters: list[tuple[int, ...]] = []
    last_id: dict[int, int] = {0: 0}
    for jid in order:
        rj = by_id[jid]
        parent = last_id[rj.parent]
        group: list[int] = []
        if not rj.dofs:
            new_id = len(joints) + 1
            joints.append(
                Joint(id=new_id, parent=parent, axis=(1.0, 0.0, 0.0), bone=rj.bone, limits=None, name=rj.name)
            )
            group.append(new_id)
        else:
            k = len(rj.dofs)
            for pos, dof in enumerate(rj.dofs):
                new_id = len(joints) + 1
                is_last = pos == k - 1
                joints.append(
                    Joint(
                        id=new_id,
                        parent=parent if pos == 0 else new_id - 1,
                        axis=dof.axis,
                        bone=rj.bone if is_last else np.zeros(3),
                        limits=dof.limits,
                        name=rj.name if k == 1 else f"{rj.name}.{pos}",
                    )
                )
                group.append(new_id)
            parent = group[-1]
        last_id[jid] = group[-1]
        clusters.append(tuple(group))
    return Skeleton(joints=tuple(joints), name=raw.name, clusters=tuple(clusters))


# ===== JSON serialization =====


def _limits_to_json(limits):
    return "fixed" if limits is None else [limits[0], limits[1]]


def _limits_from_json(value):
    if value == "fixed":
        return None
    lo, hi = value
    return (float(lo), float(hi))


def skeleton_to_dict(skeleton: Skeleton) -> dict:
    out = {
        "name": skeleton.name,
        "joints": [
            {
                "id": j.id,
                "parent": j.parent,
                "axis": j.axis.tolist(),
                "bone": j.bone.tolist(),
                "limits": _limits_to_json(j.limits),
                "name": j.name,
            }
            for j in skeleton.joints
        ],
    }
    if skeleton.clusters is not None:
        out["clusters"] = [list(group) for group in skeleton.clusters]
    return out


def raw_skeleton_to_dict(raw: RawSkeleton) -> dict:
    return {
        "name": raw.name,
        "joints": [
            {
                "id": j.id,
                "parent": j.parent,
                "dofs": [{"axis": d.axis.tolist(), "limits": list(d.limits)} for d in j.dofs],
                "bone": j.bone.tolist(),
                "name": j.name,
            }
            for j in raw.joints
        ],
    }


def skeleton_from_dict(data: dict) -> Skeleton | RawSkeleton:
    """Build a skeleton from its JSON dict; raw multi-DOF input stays raw."""
    joints = data.get("joints")
    if not joints:
        raise ValueError("skeleton JSON needs a non-empty 'joints' list")
    if any("dofs" in j for j in joints):
        raw_joints = tuple(
            RawJoint(
                id=int(j["id"]),
                parent=int(j["parent"]),
                dofs=tuple(
                    RawDof(axis=d["axis"], limits=_limits_from_json(d.get("limits", list(DEFAULT_LIMITS))))
                    for d in j.get("dofs", [])
                ),
                bone=j["bone"],
                name=j.get("name", ""),
            )
            for j in joints
        )
        return RawSkeleton(joints=raw_joints, name=data.get("name", ""))
    built = tuple(
        Joint(
            id=int(j["id"]),
            parent=int(j["parent"]),
            axis=j["axis"],
            bone=j["bone"],
            limits=_limits_from_json(j["limits"]),
            name=j.get("name", ""),
        )
        for j in joints
    )
    clusters = data.get("clusters")
    if clusters is not None:
        clusters = tuple(tuple(int(i) for i in group) for group in clusters)
    return Skeleton(joints=built, name=data.get("name", ""), clusters=clusters)


def load_skeleton(path, *, normalize: bool = True) -> Skeleton:
    """Load a skeleton JSON file, normalizing raw multi-DOF input by default."""
    with open(Path(path), "r", encoding="utf-8") as fh:
        data = json.load(fh)
    skeleton = skeleton_from_dict(data)
    if isinstance(skeleton, RawSkeleton):
        if not normalize:
            raise ValueError(f"{path} holds a raw multi-DOF skeleton; pass normalize=True")
        skeleton = normalize_skeleton(skeleton)
    return skeleton


def save_skeleton(skeleton: Skeleton | RawSkeleton, path) -> None:
    data = raw_skeleton_to_dict(skeleton) if isinstance(skeleton, RawSkeleton) else skeleton_to_dict(skeleton)
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
