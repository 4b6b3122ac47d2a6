"""Kinematics: rotations, forward kinematics, Jacobians, normalization, JSON I/O."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    AXES,
    finite_difference_jacobian,
    make_chain,
    observe_all,
    oracle_raw_fk,
    oracle_rotation,
    random_params,
    random_skeleton,
    random_unit,
)
from sdpik.kinematics import (
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
    skeleton_from_dict,
    skeleton_to_dict,
)


# ===== rodrigues =====


def test_rodrigues_zero_angle_is_identity():
    np.testing.assert_allclose(rodrigues([0.0, 0.0, 1.0], 0.0), np.eye(3), atol=1e-15)


def test_rodrigues_quarter_turn_about_z():
    # Expected matrix written out by hand: e_x -> e_y, e_y -> -e_x.
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(rodrigues([0.0, 0.0, 1.0], math.pi / 2), expected, atol=1e-15)


def test_rodrigues_matches_matrix_exponential():
    rng = np.random.default_rng(11)
    for _ in range(50):
        axis = random_unit(rng)
        angle = rng.uniform(-2 * np.pi, 2 * np.pi)
        np.testing.assert_allclose(rodrigues(axis, angle), oracle_rotation(axis, angle), atol=1e-12)


def test_rodrigues_rejects_non_unit_axis():
    with pytest.raises(ValueError):
        rodrigues([1.0, 1.0, 0.0], 0.3)


@settings(max_examples=60, deadline=None)
@given(
    st.tuples(
        st.floats(-1, 1, allow_nan=False),
        st.floats(-1, 1, allow_nan=False),
        st.floats(-1, 1, allow_nan=False),
    ).filter(lambda v: np.linalg.norm(v) > 1e-3),
    st.floats(-7.0, 7.0, allow_nan=False),
)
def test_rodrigues_is_a_rotation(raw_axis, angle):
    axis = np.asarray(raw_axis) / np.linalg.norm(raw_axis)
    rot = rodrigues(axis, angle)
    np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-12)
    assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)
    # The axis is invariant under its own rotation.
    np.testing.assert_allclose(rot @ axis, axis, atol=1e-12)


# ===== axis_frame =====


def test_axis_frame_identity_for_ex():
    np.testing.assert_array_equal(axis_frame([1.0, 0.0, 0.0]), np.eye(3))


def test_axis_frame_antipodal_is_pi_about_ez():
    expected = np.diag([-1.0, -1.0, 1.0])
    np.testing.assert_array_equal(axis_frame([-1.0, 0.0, 0.0]), expected)


def test_axis_frame_maps_axis_to_ex():
    rng = np.random.default_rng(7)
    for _ in range(200):
        axis = random_unit(rng)
        frame = axis_frame(axis)
        np.testing.assert_allclose(frame @ axis, [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(frame.T @ frame, np.eye(3), atol=1e-12)
        assert np.linalg.det(frame) == pytest.approx(1.0, abs=1e-12)


def test_axis_frame_conjugates_rodrigues_to_canonical():
    # rodrigues(a, th) == S^T @ Rx(th) @ S with S = axis_frame(a).
    rng = np.random.default_rng(13)
    for _ in range(100):
        axis = random_unit(rng)
        angle = rng.uniform(-np.pi, np.pi)
        frame = axis_frame(axis)
        c, s = math.cos(angle), math.sin(angle)
        canonical = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
        np.testing.assert_allclose(frame.T @ canonical @ frame, rodrigues(axis, angle), atol=1e-12)


# ===== forward kinematics =====


def test_fk_two_joint_planar_hand_values():
    # Hand-computed: t=(0.1,0.2,0.3), unit bones along x, both angles pi/2.
    skeleton = make_chain(["z", "z"])
    params = ParamVector(t=[0.1, 0.2, 0.3], theta=[math.pi / 2, math.pi / 2])
    positions = forward_kinematics(skeleton, params)
    np.testing.assert_allclose(positions[0], [1.1, 0.2, 0.3], atol=1e-14)
    np.testing.assert_allclose(positions[1], [1.1, 1.2, 0.3], atol=1e-14)


def test_fk_translation_only_accumulates_bones():
    skeleton = make_chain(["z", "z", "z"], bones=[(1, 0, 0), (0, 2, 0), (0, 0, 3)])
    params = ParamVector(t=[1.0, 1.0, 1.0], theta=[0.0, 0.0, 0.0])
    positions = forward_kinematics(skeleton, params)
    np.testing.assert_allclose(positions[2], [2.0, 3.0, 4.0], atol=1e-14)


def test_fk_product_and_recursion_agree_on_random_trees():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        skeleton = random_skeleton(rng)
        params = random_params(skeleton, rng)
        a = forward_kinematics(skeleton, params)
        b = forward_kinematics_product(skeleton, params)
        assert np.max(np.abs(a - b)) < 1e-12


def test_global_rotations_compose_relative_rotations():
    rng = np.random.default_rng(5)
    skeleton = make_chain(["z", "y", "x"])
    params = random_params(skeleton, rng)
    rotations = global_rotations(skeleton, params)
    expected = np.eye(3)
    for j, joint in enumerate(skeleton.joints):
        expected = expected @ rodrigues(joint.axis, params.theta[j])
        np.testing.assert_allclose(rotations[j], expected, atol=1e-13)


def test_fixed_joint_keeps_parent_rotation():
    skeleton = Skeleton(
        joints=(
            Joint(id=1, parent=0, axis=(0, 0, 1), bone=(1, 0, 0), limits=(-np.pi, np.pi)),
            Joint(id=2, parent=1, axis=(1, 0, 0), bone=(0.5, 0, 0), limits=None),
        )
    )
    params = ParamVector(t=np.zeros(3), theta=[0.7, 123.0])  # fixed angle ignored
    rotations = global_rotations(skeleton, params)
    np.testing.assert_allclose(rotations[1], rotations[0], atol=1e-15)
    positions = forward_kinematics(skeleton, params)
    np.testing.assert_allclose(positions[1], positions[0] + rotations[0] @ [0.5, 0, 0], atol=1e-14)


# ===== Jacobian =====


def test_fk_jacobian_translation_block_is_identity():
    skeleton = make_chain(["z", "y"])
    params = ParamVector(t=[0.3, -0.1, 0.2], theta=[0.4, -0.9])
    obs = observe_all(skeleton, params)
    jac = fk_jacobian(skeleton, params, obs)
    for row in range(len(obs)):
        np.testing.assert_array_equal(jac[3 * row : 3 * row + 3, 0:3], np.eye(3))


def test_fk_jacobian_matches_finite_differences():
    rng = np.random.default_rng(42)
    for _ in range(25):
        skeleton = random_skeleton(rng, max_joints=7)
        params = random_params(skeleton, rng)
        observed = tuple(
            sorted(rng.choice(np.arange(1, skeleton.n_joints + 1), size=min(3, skeleton.n_joints), replace=False))
        )
        obs = Observation(joints=observed, targets=np.zeros((len(observed), 3)))

        def stacked(values):
            p = ParamVector.from_array(values)
            positions = forward_kinematics(skeleton, p)
            return np.concatenate([positions[j - 1] for j in obs.joints])

        analytic = fk_jacobian(skeleton, params, obs)
        numeric = finite_difference_jacobian(stacked, params.as_array(), h=1e-6)
        assert np.max(np.abs(analytic - numeric)) < 1e-6


def test_fk_jacobian_zero_for_joints_off_the_path():
    # Star: joints 2 and 3 both hang off joint 1; theta_3 cannot move joint 2.
    joints = (
        Joint(id=1, parent=0, axis=(0, 0, 1), bone=(0, 0, 0), limits=(-np.pi, np.pi)),
        Joint(id=2, parent=1, axis=(0, 0, 1), bone=(1, 0, 0), limits=(-np.pi, np.pi)),
        Joint(id=3, parent=1, axis=(0, 0, 1), bone=(0, 1, 0), limits=(-np.pi, np.pi)),
    )
    skeleton = Skeleton(joints=joints)
    params = ParamVector(t=np.zeros(3), theta=[0.3, 0.2, 0.1])
    obs = Observation(joints=(2,), targets=np.zeros((1, 3)))
    jac = fk_jacobian(skeleton, params, obs)
    np.testing.assert_array_equal(jac[:, 3 + 2], np.zeros(3))


# ===== interval distance =====


@pytest.mark.parametrize(
    "angle,limits,expected",
    [
        (0.0, (-1.0, 1.0), 0.0),
        (1.0, (-1.0, 1.0), 0.0),
        (1.5, (-1.0, 1.0), 0.5),
        (-2.0, (-1.0, 1.0), 1.0),
        (3.0, None, 0.0),
        (0.25, (0.25, 0.25), 0.0),
        (0.5, (0.25, 0.25), 0.25),
    ],
)
def test_interval_distance_cases(angle, limits, expected):
    assert interval_distance(angle, limits) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10, allow_nan=False), st.floats(-3, 3, allow_nan=False), st.floats(0, 3, allow_nan=False))
def test_interval_distance_is_min_endpoint_distance_outside(angle, lo, width):
    limits = (lo, lo + width)
    dist = interval_distance(angle, limits)
    assert dist >= 0.0
    if limits[0] <= angle <= limits[1]:
        assert dist == 0.0
    else:
        assert dist == pytest.approx(min(abs(angle - limits[0]), abs(angle - limits[1])), abs=1e-12)


# ===== normalization =====


def _raw_three_dof_root(bone=(0.0, 0.0, 0.0)):
    return RawJoint(
        id=1,
        parent=0,
        dofs=(
            RawDof(axis=AXES["x"]),
            RawDof(axis=AXES["y"]),
            RawDof(axis=AXES["z"]),
        ),
        bone=np.asarray(bone, dtype=float),
        name="root",
    )


def test_normalize_three_dof_joint_shapes():
    raw = RawSkeleton(joints=(_raw_three_dof_root(bone=(0.2, 0.0, 0.1)),))
    skeleton = normalize_skeleton(raw)
    assert skeleton.n_joints == 3
    # First two carry zero bones; the last carries the original bone.
    np.testing.assert_array_equal(skeleton.joints[0].bone, np.zeros(3))
    np.testing.assert_array_equal(skeleton.joints[1].bone, np.zeros(3))
    np.testing.assert_allclose(skeleton.joints[2].bone, [0.2, 0.0, 0.1])
    assert skeleton.clusters == ((1, 2, 3),)
    assert [j.parent for j in skeleton.joints] == [0, 1, 2]


def test_normalize_is_identity_on_one_dof_skeletons():
    raw = RawSkeleton(
        joints=(
            RawJoint(id=1, parent=0, dofs=(RawDof(axis=AXES["z"], limits=(-1.0, 2.0)),), bone=(0, 0, 0)),
            RawJoint(id=2, parent=1, dofs=(RawDof(axis=AXES["y"], limits=(-0.5, 0.5)),), bone=(1, 0, 0)),
            RawJoint(id=3, parent=2, dofs=(), bone=(0.5, 0, 0)),
        )
    )
    skeleton = normalize_skeleton(raw)
    assert skeleton.n_joints == 3
    assert [j.parent for j in skeleton.joints] == [0, 1, 2]
    np.testing.assert_array_equal(skeleton.joints[1].axis, AXES["y"])
    assert skeleton.joints[1].limits == (-0.5, 0.5)
    assert skeleton.joints[2].fixed
    assert skeleton.clusters == ((1,), (2,), (3,))


def _raw_hand_like() -> RawSkeleton:
    """Raw skeleton with a 3-DOF root, 2-DOF knuckles, 1-DOF hinges, fixed tips."""
    joints = [
        _raw_three_dof_root(),
    ]
    jid = 2
    for finger, lateral in enumerate((-0.03, 0.03)):
        knuckle = RawJoint(
            id=jid,
            parent=1,
            dofs=(
                RawDof(axis=AXES["z"], limits=(-0.4, 0.4)),
                RawDof(axis=AXES["y"], limits=(-0.2, 1.6)),
            ),
            bone=(0.09, lateral, 0.0),
            name=f"knuckle{finger}",
        )
        hinge = RawJoint(
            id=jid + 1,
            parent=jid,
            dofs=(RawDof(axis=AXES["y"], limits=(0.0, 1.7)),),
            bone=(0.035, 0.0, 0.0),
            name=f"hinge{finger}",
        )
        tip = RawJoint(id=jid + 2, parent=jid + 1, dofs=(), bone=(0.025, 0.0, 0.0), name=f"tip{finger}")
        joints += [knuckle, hinge, tip]
        jid += 3
    return RawSkeleton(joints=tuple(joints), name="raw-hand")


def test_normalize_fk_matches_raw_chain_oracle():
    raw = _raw_hand_like()
    skeleton = normalize_skeleton(raw)
    assert skeleton.n_joints == 3 + 2 * (2 + 1 + 1)
    rng = np.random.default_rng(99)
    for _ in range(100):
        theta_by_joint = {
            j.id: [rng.uniform(d.limits[0], d.limits[1]) for d in j.dofs] for j in raw.joints
        }
        t = rng.uniform(-1, 1, size=3)
        # Fixed raw joints still occupy one (pinned) slot in the normalized vector.
        flat = [a for j in raw.joints for a in (theta_by_joint[j.id] or [0.0])]
        params = ParamVector(t=t, theta=np.array(flat))
        positions = forward_kinematics(skeleton, params)
        oracle = oracle_raw_fk(raw, theta_by_joint, t)
        # The last normalized joint of each cluster sits at the raw joint position.
        for cluster, raw_joint in zip(skeleton.clusters, raw.joints):
            np.testing.assert_allclose(positions[cluster[-1] - 1], oracle[raw_joint.id], atol=1e-12)


def test_normalize_detects_cycle():
    raw = RawSkeleton(
        joints=(
            RawJoint(id=1, parent=0, dofs=(RawDof(axis=AXES["z"]),), bone=(0, 0, 0)),
            RawJoint(id=2, parent=3, dofs=(RawDof(axis=AXES["z"]),), bone=(1, 0, 0)),
            RawJoint(id=3, parent=2, dofs=(RawDof(axis=AXES["z"]),), bone=(1, 0, 0)),
        )
    )
    with pytest.raises(ValueError, match="cycle|unreachable"):
        normalize_skeleton(raw)


def test_normalize_rejects_multiple_roots():
    raw = RawSkeleton(
        joints=(
            RawJoint(id=1, parent=0, dofs=(RawDof(axis=AXES["z"]),), bone=(0, 0, 0)),
            RawJoint(id=2, parent=0, dofs=(RawDof(axis=AXES["z"]),), bone=(1, 0, 0)),
        )
    )
    with pytest.raises(ValueError, match="root"):
        normalize_skeleton(raw)


def test_axis_renormalized_and_degenerate_axis_rejected():
    joint = Joint(id=1, parent=0, axis=(0.0, 0.0, 2.0), bone=(0, 0, 0), limits=(-1, 1))
    np.testing.assert_allclose(joint.axis, [0, 0, 1.0])
    with pytest.raises(ValueError, match="axis"):
        Joint(id=1, parent=0, axis=(0.0, 0.0, 1e-9), bone=(0, 0, 0), limits=(-1, 1))


def test_limit_interval_wider_than_two_pi_rejected():
    with pytest.raises(ValueError, match="2\\*pi"):
        Joint(id=1, parent=0, axis=(0, 0, 1), bone=(0, 0, 0), limits=(-4.0, 4.0))


# ===== types =====


def test_observation_sorted_and_distinct():
    obs = Observation(joints=(3, 1), targets=[[3.0, 3, 3], [1.0, 1, 1]])
    assert obs.joints == (1, 3)
    np.testing.assert_array_equal(obs.targets[0], [1.0, 1, 1])
    with pytest.raises(ValueError, match="distinct"):
        Observation(joints=(1, 1), targets=np.zeros((2, 3)))
    with pytest.raises(ValueError, match="at least one"):
        Observation(joints=(), targets=np.zeros((0, 3)))


def test_param_vector_round_trip():
    params = ParamVector(t=[1.0, 2.0, 3.0], theta=[0.1, -0.2])
    np.testing.assert_array_equal(ParamVector.from_array(params.as_array()).as_array(), params.as_array())


def test_skeleton_rejects_second_root_and_gaps():
    with pytest.raises(ValueError, match="anchor"):
        Skeleton(
            joints=(
                Joint(id=1, parent=0, axis=(0, 0, 1), bone=(0, 0, 0), limits=(-1, 1)),
                Joint(id=2, parent=0, axis=(0, 0, 1), bone=(1, 0, 0), limits=(-1, 1)),
            )
        )
    with pytest.raises(ValueError, match="consecutive"):
        Skeleton(joints=(Joint(id=2, parent=1, axis=(0, 0, 1), bone=(0, 0, 0), limits=(-1, 1)),))


# ===== JSON =====


def test_skeleton_json_round_trip(tmp_path):
    skeleton = make_chain(["z", "y", "x"], limits=[(-1.0, 1.0), (-2.0, 0.5), (-np.pi, np.pi)])
    path = tmp_path / "chain.json"
    save_skeleton(skeleton, path)
    loaded = load_skeleton(path)
    assert loaded.n_joints == skeleton.n_joints
    for a, b in zip(loaded.joints, skeleton.joints):
        assert a.limits == b.limits
        np.testing.assert_array_equal(a.axis, b.axis)
        np.testing.assert_array_equal(a.bone, b.bone)


def test_raw_skeleton_json_loads_normalized(tmp_path):
    raw = _raw_hand_like()
    from sdpik.kinematics import raw_skeleton_to_dict

    path = tmp_path / "raw.json"
    with open(path, "w") as fh:
        json.dump(raw_skeleton_to_dict(raw), fh)
    skeleton = load_skeleton(path)
    assert skeleton.n_joints == 11
    assert skeleton.clusters is not None


def test_skeleton_dict_fixed_marker():
    skeleton = Skeleton(
        joints=(
            Joint(id=1, parent=0, axis=(0, 0, 1), bone=(0, 0, 0), limits=(-1, 1)),
            Joint(id=2, parent=1, axis=(1, 0, 0), bone=(1, 0, 0), limits=None),
        )
    )
    data = skeleton_to_dict(skeleton)
    assert data["joints"][1]["limits"] == "fixed"
    rebuilt = skeleton_from_dict(data)
    assert rebuilt.joints[1].fixed
