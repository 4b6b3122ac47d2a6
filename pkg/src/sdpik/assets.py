"""Bundled benchmark skeletons and reproducible pose sets.

Two instances ship with the package: a 17-joint hand (wrist cluster, thumb,
two fingers; bones of a few centimeters) and a 21-joint body (spine, head,
arms, legs; bones of tens of centimeters).  Both are stored as raw multi-DOF
JSON and normalized to one-DOF chains on load.  The 100-pose benchmark sets
are shipped as JSON too and can be regenerated bit-identically from their
recorded seeds with ``python -m sdpik.assets <directory>``.
"""

from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .kinematics import (
    ParamVector,
    RawDof,
    RawJoint,
    RawSkeleton,
    Skeleton,
    load_skeleton,
    normalize_skeleton,
    save_skeleton,
)
from .local_ik import random_init

__all__ = [
    "mini_hand",
    "mini_body",
    "builtin_skeleton",
    "shipped_poses",
    "generate_poses",
    "regenerate_assets",
    "BUILTIN_SKELETONS",
    "POSE_SEEDS",
    "POSE_COUNT",
]

BUILTIN_SKELETONS = ("mini_hand", "mini_body")
POSE_SEEDS = {"mini_hand": 1001, "mini_body": 2002}
POSE_COUNT = 100

_X = (1.0, 0.0, 0.0)
_Y = (0.0, 1.0, 0.0)
_Z = (0.0, 0.0, 1.0)


def _hand_raw() -> RawSkeleton:
    pi = float(np.pi)
    joints = [
        RawJoint(id=1, parent=0, bone=(0.0, 0.0, 0.0), name="wrist",
                 dofs=(RawDof(_Z, (-pi, pi)), RawDof(_Y, (-0.9, 0.9)), RawDof(_X, (-0.6, 0.6)))),
        RawJoint(id=2, parent=1, bone=(0.025, 0.025, 0.01), name="thumb_knuckle",
                 dofs=(RawDof(_Z, (-0.3, 1.1)), RawDof(_Y, (-1.3, 0.2)))),
        RawJoint(id=3, parent=2, bone=(0.045, 0.0, 0.0), name="thumb_hinge",
                 dofs=(RawDof(_Y, (-1.4, 0.1)),)),
        RawJoint(id=4, parent=3, bone=(0.03, 0.0, 0.0), name="thumb_tip", dofs=()),
        RawJoint(id=5, parent=1, bone=(0.09, 0.015, 0.0), name="index_knuckle",
                 dofs=(RawDof(_Z, (-0.35, 0.35)), RawDof(_Y, (-1.6, 0.25)))),
        RawJoint(id=6, parent=5, bone=(0.04, 0.0, 0.0), name="index_mid",
                 dofs=(RawDof(_Y, (-1.7, 0.1)),)),
        RawJoint(id=7, parent=6, bone=(0.025, 0.0, 0.0), name="index_distal",
                 dofs=(RawDof(_Y, (-1.5, 0.1)),)),
        RawJoint(id=8, parent=7, bone=(0.02, 0.0, 0.0), name="index_tip", dofs=()),
        RawJoint(id=9, parent=1, bone=(0.092, -0.012, 0.0), name="middle_knuckle",
                 dofs=(RawDof(_Z, (-0.35, 0.35)), RawDof(_Y, (-1.6, 0.25)))),
        RawJoint(id=10, parent=9, bone=(0.042, 0.0, 0.0), name="middle_mid",
                 dofs=(RawDof(_Y, (-1.7, 0.1)),)),
        RawJoint(id=11, parent=10, bone=(0.027, 0.0, 0.0), name="middle_distal",
                 dofs=(RawDof(_Y, (-1.5, 0.1)),)),
        RawJoint(id=12, parent=11, bone=(0.021, 0.0, 0.0), name="middle_tip", dofs=()),
    ]
    return RawSkeleton(joints=tuple(joints), name="mini_hand")


def _body_raw() -> RawSkeleton:
    pi = float(np.pi)
    joints = [
        RawJoint(id=1, parent=0, bone=(0.0, 0.0, 0.0), name="pelvis",
                 dofs=(RawDof(_Z, (-pi, pi)), RawDof(_Y, (-0.8, 0.8)), RawDof(_X, (-0.8, 0.8)))),
        RawJoint(id=2, parent=1, bone=(0.0, 0.0, 0.25), name="spine",
                 dofs=(RawDof(_X, (-0.6, 0.6)),)),
        RawJoint(id=3, parent=2, bone=(0.0, 0.0, 0.30), name="head", dofs=()),
        RawJoint(id=4, parent=2, bone=(0.0, 0.20, 0.22), name="l_shoulder",
                 dofs=(RawDof(_Z, (-1.2, 1.2)), RawDof(_X, (-1.5, 1.5)))),
        RawJoint(id=5, parent=4, bone=(0.0, 0.28, 0.0), name="l_elbow",
                 dofs=(RawDof(_Z, (-2.4, 0.0)),)),
        RawJoint(id=6, parent=5, bone=(0.0, 0.25, 0.0), name="l_hand", dofs=()),
        RawJoint(id=7, parent=2, bone=(0.0, -0.20, 0.22), name="r_shoulder",
                 dofs=(RawDof(_Z, (-1.2, 1.2)), RawDof(_X, (-1.5, 1.5)))),
        RawJoint(id=8, parent=7, bone=(0.0, -0.28, 0.0), name="r_elbow",
                 dofs=(RawDof(_Z, (0.0, 2.4)),)),
        RawJoint(id=9, parent=8, bone=(0.0, -0.25, 0.0), name="r_hand", dofs=()),
        RawJoint(id=10, parent=1, bone=(0.0, 0.11, -0.05), name="l_hip",
                 dofs=(RawDof(_Y, (-1.9, 0.5)), RawDof(_X, (-0.7, 0.7)))),
        RawJoint(id=11, parent=10, bone=(0.0, 0.0, -0.42), name="l_knee",
                 dofs=(RawDof(_Y, (0.0, 2.3)),)),
        RawJoint(id=12, parent=11, bone=(0.0, 0.0, -0.40), name="l_foot", dofs=()),
        RawJoint(id=13, parent=1, bone=(0.0, -0.11, -0.05), name="r_hip",
                 dofs=(RawDof(_Y, (-1.9, 0.5)), RawDof(_X, (-0.7, 0.7)))),
        RawJoint(id=14, parent=13, bone=(0.0, 0.0, -0.42), name="r_knee",
                 dofs=(RawDof(_Y, (0.0, 2.3)),)),
        RawJoint(id=15, parent=14, bone=(0.0, 0.0, -0.40), name="r_foot", dofs=()),
    ]
    return RawSkeleton(joints=tuple(joints), name="mini_body")


def _asset_path(filename: str):
    return resources.files("sdpik").joinpath("assets", filename)


def builtin_skeleton(name: str) -> Skeleton:
    """Load a bundled skeleton by name, normalized to one-DOF joints."""
    if name not in BUILTIN_SKELETONS:
        raise KeyError(f"unknown builtin skeleton {name!r}; options: {BUILTIN_SKELETONS}")
    with resources.as_file(_asset_path(f"{name}.json")) as path:
        return load_skeleton(path)


def mini_hand() -> Skeleton:
    return builtin_skeleton("mini_hand")


def mini_body() -> Skeleton:
    return builtin_skeleton("mini_body")


def generate_poses(skeleton: Skeleton, count: int, seed: int) -> list[ParamVector]:
    """Deterministic benchmark poses: limit-respecting angle draws per joint
    plus a translation inside the skeleton-scaled box (one seed per pose)."""
    return [random_init(skeleton, seed=seed + i) for i in range(count)]


def shipped_poses(name: str) -> list[ParamVector]:
    """The bundled 100-pose benchmark set for a builtin skeleton."""
    if name not in BUILTIN_SKELETONS:
        raise KeyError(f"unknown builtin skeleton {name!r}; options: {BUILTIN_SKELETONS}")
    with resources.as_file(_asset_path(f"{name}_poses.json")) as path:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        ParamVector(t=np.array(p["t"], dtype=float), theta=np.array(p["theta"], dtype=float))
        for p in data["poses"]
    ]


def _poses_to_json(name: str, skeleton: Skeleton, poses: list[ParamVector], seed: int) -> dict:
    return {
        "skeleton": name,
        "seed": seed,
        "count": len(poses),
        "n_joints": skeleton.n_joints,
        "poses": [{"t": p.t.tolist(), "theta": p.theta.tolist()} for p in poses],
    }


def regenerate_assets(directory) -> list[str]:
    """Write the skeleton and pose JSON files into ``directory``.

    Rebuilds exactly the shipped files (same seeds, same content); returns
    the filenames written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, raw in (("mini_hand", _hand_raw()), ("mini_body", _body_raw())):
        skel_path = directory / f"{name}.json"
        save_skeleton(raw, skel_path)
        written.append(skel_path.name)
        skeleton = normalize_skeleton(raw)
        poses = generate_poses(skeleton, POSE_COUNT, POSE_SEEDS[name])
        pose_path = directory / f"{name}_poses.json"
        with open(pose_path, "w", encoding="utf-8") as fh:
            json.dump(_poses_to_json(name, skeleton, poses, POSE_SEEDS[name]), fh, indent=2)
            fh.write("\n")
        written.append(pose_path.name)
    return written


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "."
    for filename in regenerate_assets(target):
        print(filename)
