"""Compilation of tree IK instances into semidefinite relaxations.

The target-matching problem

    minimize  sum_j ||y_j - x_j(t, theta)||^2   over t and joint angles

is polynomial in the entries of the per-joint rotations, so it lifts to a
semidefinite program over one scalar variable vector holding, per joint j:

    p_j          world position (3)
    r_j          vec(R_j), column-major stack of the world rotation (9)
    r_j^rel      vec(R_j^rel), the rotation about the joint axis (9)
    c_j, s_j     cosine and sine of the joint angle (revolute joints)
    r_j^can      vec of the canonical x-axis rotation S R_rel S^T (revolute)

plus the shared root translation t, one epigraph scalar q_j per observed
joint, and 45 lift entries (upper triangle of r r^T) for each of the three
rotation copies of each revolute joint.  Constraints:

  * recursion        p_j = p_parent + R_parent v_j, linear because R_parent
                     enters through its own variable block
  * multiplication   R_j = R_parent R_j^rel, bilinear, relaxed by a 9x9 PSD
                     Gram block over the three rotation vectors
  * lifted rotations [[1, r^T], [r, RR]] PSD with RR standing for r r^T,
                     tied to r by 30 linear equations per copy (orthogonality
                     of rows and columns plus both cross-product identities,
                     which excludes reflections)
  * axis reduction   r_rel is affine in (c, s) through the axis frame, and
                     r_can follows the planar rotation pattern
  * joint limits     the (c, s) disc block, with one halfspace row when the
                     angle interval is a strict subset of the circle
  * epigraph         q_j >= ||y_j - p_j||^2 as a 4x4 Schur block

Fixed joints carry no angle: their relative rotation is pinned to the
identity and their world rotation to the parent's by linear equalities, so
they add no PSD blocks.  The relaxation is tight exactly when the optimal
lift blocks are rank one, in which case the minimizer embeds a true pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic_solver import ConicProgram, ProgramBuilder
from .kinematics import (
    Observation,
    ParamVector,
    Skeleton,
    axis_frame,
    forward_kinematics,
    global_rotations,
    rodrigues,
)

__all__ = [
    "VariableLayout",
    "EmbedReport",
    "build_sdp",
    "embed_ground_truth",
    "lifted_rotation_constraints",
    "multiplication_block",
    "joint_limit_constraints",
    "conjugation_constraints",
    "lift_pair_index",
    "vec_rotation",
    "unvec_rotation",
    "block_census",
    "FULL_CIRCLE_TOLERANCE",
]

# Intervals within this tolerance of the full circle get no halfspace row.
FULL_CIRCLE_TOLERANCE = 1e-9

_CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def vec_rotation(R: np.ndarray) -> np.ndarray:
    """Column-major stack: vec(R)[3c + i] = R[i, c]."""
    return np.asarray(R, dtype=float).reshape(9, order="F")


def unvec_rotation(r: np.ndarray) -> np.ndarray:
    return np.asarray(r, dtype=float).reshape(3, 3, order="F")


def lift_pair_index(i: int, j: int) -> int:
    """Position of entry (i, j), i <= j, in the packed upper triangle of a 9x9."""
    if i > j:
        i, j = j, i
    return 9 * i - (i * (i - 1)) // 2 + (j - i)


@dataclass(frozen=True)
class VariableLayout:
    """Index map into the scalar variable vector of a compiled relaxation.

    Per-joint sequences are indexed by ``joint_id - 1``.  Entries for
    quantities a joint does not have (angles of fixed joints, lifts) are
    ``None``.  ``q`` maps observed joint ids to their epigraph variable.
    """

    n_vars: int
    t: slice
    p: tuple[slice, ...]
    r: tuple[slice, ...]
    r_rel: tuple[slice, ...]
    cs: tuple[tuple[int, int] | None, ...]
    r_can: tuple[slice | None, ...]
    q: dict[int, int]
    lift_r: tuple[slice | None, ...]
    lift_rel: tuple[slice | None, ...]
    lift_can: tuple[slice | None, ...]

    def describe(self) -> str:
        joints = len(self.p)
        revolute = sum(1 for v in self.cs if v is not None)
        return (
            f"{self.n_vars} variables over {joints} joints "
            f"({revolute} revolute, {joints - revolute} fixed, {len(self.q)} observed)"
        )


@dataclass(frozen=True)
class EmbedReport:
    """Feasibility of a hand-built assignment, for validating a relaxation."""

    max_equality_residual: float
    min_block_eigenvalue: float
    objective: float


def lifted_rotation_constraints(builder: ProgramBuilder, r_sl: slice, lift_sl: slice, label: str) -> None:
    """PSD block [[1, r^T], [r, RR]] plus the 30 linear rows tying RR to r.

    The rows encode R^T R = I and R R^T = I (6 each) and both cross-product
    identities (columns and rows, 9 each): each entry of r equals a signed
    sum of two entries of RR.  Together they cut the reflections out of the
    feasible set; a proper rotation with RR = r r^T satisfies all of them.
    """
    r = list(range(r_sl.start, r_sl.stop))
    lift = list(range(lift_sl.start, lift_sl.stop))

    blk = builder.add_block(label, 10)
    builder.set_entry(blk, 0, 0, 1.0)
    for k in range(9):
        builder.set_entry(blk, 0, 1 + k, 1.0, var=r[k])
    for i in range(9):
        for j in range(i, 9):
            builder.set_entry(blk, 1 + i, 1 + j, 1.0, var=lift[lift_pair_index(i, j)])

    # R^T R = I: column Gram.
    for c in range(3):
        for d in range(c, 3):
            terms = [(lift[lift_pair_index(3 * c + i, 3 * d + i)], 1.0) for i in range(3)]
            builder.add_equality(terms, 1.0 if c == d else 0.0, f"{label}:colgram[{c},{d}]")
    # R R^T = I: row Gram.
    for i in range(3):
        for k in range(i, 3):
            terms = [(lift[lift_pair_index(3 * c + i, 3 * c + k)], 1.0) for c in range(3)]
            builder.add_equality(terms, 1.0 if i == k else 0.0, f"{label}:rowgram[{i},{k}]")
    # col_alpha x col_beta = col_gamma.
    for al, be, ga in _CYCLIC:
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            terms = [
                (r[3 * ga + i], 1.0),
                (lift[lift_pair_index(3 * al + a, 3 * be + b)], -1.0),
                (lift[lift_pair_index(3 * al + b, 3 * be + a)], 1.0),
            ]
            builder.add_equality(terms, 0.0, f"{label}:colcross[{ga},{i}]")
    # row_alpha x row_beta = row_gamma.
    for al, be, ga in _CYCLIC:
        for c in range(3):
            d, e = (c + 1) % 3, (c + 2) % 3
            terms = [
                (r[3 * c + ga], 1.0),
                (lift[lift_pair_index(3 * d + al, 3 * e + be)], -1.0),
                (lift[lift_pair_index(3 * e + al, 3 * d + be)], 1.0),
            ]
            builder.add_equality(terms, 0.0, f"{label}:rowcross[{ga},{c}]")


def multiplication_block(
    builder: ProgramBuilder, x_sl: slice, y_sl: slice | None, z_sl: slice, label: str
) -> None:
    """Gram relaxation of X = Y Z over rotation vectors.

    The 9x9 block [[I, Y^T, Z], [Y, I, X], [Z^T, X^T, I]] is the Gram matrix
    of the stacked orthonormal frames [I; Y; Z^T], whose off-diagonal corner
    is exactly X = Y Z at rank 3.  ``y_sl=None`` pins Y to the identity for
    joints hanging off the root.
    """
    blk = builder.add_block(label, 9)
    for i in range(9):
        builder.set_entry(blk, i, i, 1.0)
    for i in range(3):
        for k in range(3):
            # (0,1) corner: Y^T.
            if y_sl is None:
                if i == k:
                    builder.set_entry(blk, i, 3 + k, 1.0)
            else:
                builder.set_entry(blk, i, 3 + k, 1.0, var=y_sl.start + 3 * i + k)
            # (0,2) corner: Z.
            builder.set_entry(blk, i, 6 + k, 1.0, var=z_sl.start + 3 * k + i)
            # (1,2) corner: X.
            builder.set_entry(blk, 3 + i, 6 + k, 1.0, var=x_sl.start + 3 * k + i)


def joint_limit_constraints(
    builder: ProgramBuilder, c_idx: int, s_idx: int, limits: tuple[float, float], label: str
) -> None:
    """Unit-disc block on (c, s), with a halfspace row for limited joints.

    [[1, c, s], [c, 1, 0], [s, 0, 1]] is PSD iff c^2 + s^2 <= 1.  For an
    interval of width w < 2 pi with midpoint m, the appended diagonal entry

        c cos(m) + s sin(m) - cos(w / 2) >= 0

    keeps (c, s) in the circular segment spanned by the interval endpoints;
    at w = 0 it degenerates to the tangent halfplane through the single
    allowed direction.
    """
    lo, hi = limits
    width = hi - lo
    mid = 0.5 * (lo + hi)
    limited = width < 2.0 * np.pi - FULL_CIRCLE_TOLERANCE
    blk = builder.add_block(label, 4 if limited else 3)
    builder.set_entry(blk, 0, 0, 1.0)
    builder.set_entry(blk, 1, 1, 1.0)
    builder.set_entry(blk, 2, 2, 1.0)
    builder.set_entry(blk, 0, 1, 1.0, var=c_idx)
    builder.set_entry(blk, 0, 2, 1.0, var=s_idx)
    if limited:
        builder.set_entry(blk, 3, 3, -float(np.cos(0.5 * width)))
        builder.set_entry(blk, 3, 3, float(np.cos(mid)), var=c_idx)
        builder.set_entry(blk, 3, 3, float(np.sin(mid)), var=s_idx)


def conjugation_constraints(
    builder: ProgramBuilder, r_rel_sl: slice, c_idx: int, s_idx: int, axis: np.ndarray, label: str
) -> None:
    """Affine reduction of the axis rotation to its cosine and sine.

    With S = axis_frame(axis), rodrigues(axis, theta) = S^T Rx(theta) S, so
    vec(R_rel) = (S^T kron S^T) vec(Rx(theta)) is affine in (c, s).  Nine
    equality rows express each entry of r_rel through c and s.
    """
    S = axis_frame(axis)
    K = np.kron(S.T, S.T)
    base = np.zeros(9)
    base[0] = 1.0
    cos_pat = np.zeros(9)
    cos_pat[4] = cos_pat[8] = 1.0
    sin_pat = np.zeros(9)
    sin_pat[5] = 1.0
    sin_pat[7] = -1.0
    v0 = K @ base
    vc = K @ cos_pat
    vs = K @ sin_pat
    for e in range(9):
        terms = [(r_rel_sl.start + e, 1.0), (c_idx, -vc[e]), (s_idx, -vs[e])]
        builder.add_equality(terms, v0[e], f"{label}:conj[{e}]")


def _canonical_pattern_constraints(
    builder: ProgramBuilder, r_can_sl: slice, c_idx: int, s_idx: int, label: str
) -> None:
    """Pin r_can to vec([[1,0,0],[0,c,-s],[0,s,c]]); its lift then gives c^2 + s^2 = 1."""
    pattern: list[list[tuple[int, float]]] = [[] for _ in range(9)]
    rhs = [0.0] * 9
    rhs[0] = 1.0
    pattern[4] = [(c_idx, -1.0)]
    pattern[5] = [(s_idx, -1.0)]
    pattern[7] = [(s_idx, 1.0)]
    pattern[8] = [(c_idx, -1.0)]
    for e in range(9):
        builder.add_equality([(r_can_sl.start + e, 1.0)] + pattern[e], rhs[e], f"{label}:can[{e}]")


def build_sdp(skeleton: Skeleton, observation: Observation) -> tuple[ConicProgram, VariableLayout]:
    """Compile a target-matching instance into (program, layout).

    The program minimizes sum_j q_j over the lifted feasible set; its optimal
    value lower-bounds the squared position error of every pose satisfying
    the joint limits.
    """
    observation.check_against(skeleton)
    builder = ProgramBuilder()
    J = skeleton.n_joints

    t_sl = builder.alloc(3)
    p_sl = tuple(builder.alloc(3) for _ in range(J))
    r_sl = tuple(builder.alloc(9) for _ in range(J))
    rrel_sl = tuple(builder.alloc(9) for _ in range(J))
    cs_idx: list[tuple[int, int] | None] = []
    for joint in skeleton.joints:
        if joint.fixed:
            cs_idx.append(None)
        else:
            sl = builder.alloc(2)
            cs_idx.append((sl.start, sl.start + 1))
    rcan_sl = tuple(None if joint.fixed else builder.alloc(9) for joint in skeleton.joints)
    q_idx = {j: builder.alloc(1).start for j in observation.joints}
    lift_r = tuple(None if joint.fixed else builder.alloc(45) for joint in skeleton.joints)
    lift_rel = tuple(None if joint.fixed else builder.alloc(45) for joint in skeleton.joints)
    lift_can = tuple(None if joint.fixed else builder.alloc(45) for joint in skeleton.joints)

    identity_vec = vec_rotation(np.eye(3))

    for joint in skeleton.joints:
        j = joint.id - 1
        parent = joint.parent
        # Position recursion p_j = p_parent + R_parent v_j.
        parent_p = t_sl if parent == 0 else p_sl[parent - 1]
        for i in range(3):
            terms = [(p_sl[j].start + i, 1.0), (parent_p.start + i, -1.0)]
            rhs = 0.0
            if parent == 0:
                rhs = float(joint.bone[i])
            else:
                for k in range(3):
                    terms.append((r_sl[parent - 1].start + 3 * k + i, -float(joint.bone[k])))
            builder.add_equality(terms, rhs, f"recursion[{joint.id}]/{i}")

        if joint.fixed:
            # No angle: relative rotation is the identity, world rotation copies the parent.
            for e in range(9):
                builder.add_equality(
                    [(rrel_sl[j].start + e, 1.0)], identity_vec[e], f"fixedrel[{joint.id}]/{e}"
                )
                if parent == 0:
                    builder.add_equality(
                        [(r_sl[j].start + e, 1.0)], identity_vec[e], f"fixedrot[{joint.id}]/{e}"
                    )
                else:
                    builder.add_equality(
                        [(r_sl[j].start + e, 1.0), (r_sl[parent - 1].start + e, -1.0)],
                        0.0,
                        f"fixedrot[{joint.id}]/{e}",
                    )
            continue

        c_idx, s_idx = cs_idx[j]
        conjugation_constraints(builder, rrel_sl[j], c_idx, s_idx, joint.axis, f"joint[{joint.id}]")
        _canonical_pattern_constraints(builder, rcan_sl[j], c_idx, s_idx, f"joint[{joint.id}]")
        lifted_rotation_constraints(builder, r_sl[j], lift_r[j], f"lift:r[{joint.id}]")
        lifted_rotation_constraints(builder, rrel_sl[j], lift_rel[j], f"lift:rel[{joint.id}]")
        lifted_rotation_constraints(builder, rcan_sl[j], lift_can[j], f"lift:can[{joint.id}]")
        multiplication_block(
            builder,
            r_sl[j],
            None if parent == 0 else r_sl[parent - 1],
            rrel_sl[j],
            f"mult[{joint.id}]",
        )
        joint_limit_constraints(builder, c_idx, s_idx, joint.limits, f"disc[{joint.id}]")

    for jid, target in observation.items():
        blk = builder.add_block(f"epi[{jid}]", 4)
        builder.set_entry(blk, 0, 0, 1.0, var=q_idx[jid])
        for i in range(3):
            builder.set_entry(blk, 0, 1 + i, float(target[i]))
            builder.set_entry(blk, 0, 1 + i, -1.0, var=p_sl[jid - 1].start + i)
            builder.set_entry(blk, 1 + i, 1 + i, 1.0)
        builder.add_objective(q_idx[jid], 1.0)

    n_rev = sum(1 for joint in skeleton.joints if not joint.fixed)
    builder.metadata.update(
        {
            "skeleton": skeleton.name,
            "n_joints": J,
            "n_revolute": n_rev,
            "n_observed": len(observation.joints),
            "block_census": {
                "lift": 3 * n_rev,
                "multiplication": n_rev,
                "disc": n_rev,
                "epigraph": len(observation.joints),
            },
        }
    )
    program = builder.build()
    layout = VariableLayout(
        n_vars=program.n_vars,
        t=t_sl,
        p=p_sl,
        r=r_sl,
        r_rel=rrel_sl,
        cs=tuple(cs_idx),
        r_can=rcan_sl,
        q=q_idx,
        lift_r=lift_r,
        lift_rel=lift_rel,
        lift_can=lift_can,
    )
    return program, layout


def block_census(program: ConicProgram) -> dict[str, int]:
    """Count blocks of a compiled program by kind (from their labels)."""
    census: dict[str, int] = {}
    for blk in program.blocks:
        kind = blk.label.split("[", 1)[0]
        census[kind] = census.get(kind, 0) + 1
    return census


def _fill_lift(x: np.ndarray, sl: slice, v: np.ndarray) -> None:
    outer = np.outer(v, v)
    idx = sl.start
    for i in range(9):
        for j in range(i, 9):
            x[idx] = outer[i, j]
            idx += 1


def embed_ground_truth(
    skeleton: Skeleton,
    observation: Observation,
    params: ParamVector,
    program: ConicProgram,
    layout: VariableLayout,
) -> tuple[np.ndarray, EmbedReport]:
    """Rank-one embedding of a pose into the relaxation's variable vector.

    Maps a parameter vector to the assignment (positions, rotation vectors,
    cosines/sines, outer-product lifts, exact epigraph values) that a tight
    relaxation recovers, and reports its feasibility: the largest equality
    residual and the smallest eigenvalue across PSD blocks.  For a pose
    within joint limits both should vanish to numerical precision.
    """
    x = np.zeros(layout.n_vars)
    positions = forward_kinematics(skeleton, params)
    rotations = global_rotations(skeleton, params)

    x[layout.t] = params.t
    for joint in skeleton.joints:
        j = joint.id - 1
        x[layout.p[j]] = positions[j]
        r_vec = vec_rotation(rotations[j])
        x[layout.r[j]] = r_vec
        if joint.fixed:
            x[layout.r_rel[j]] = vec_rotation(np.eye(3))
            continue
        theta = float(params.theta[j])
        rel = rodrigues(joint.axis, theta)
        rel_vec = vec_rotation(rel)
        x[layout.r_rel[j]] = rel_vec
        c_idx, s_idx = layout.cs[j]
        x[c_idx] = np.cos(theta)
        x[s_idx] = np.sin(theta)
        S = axis_frame(joint.axis)
        can_vec = vec_rotation(S @ rel @ S.T)
        x[layout.r_can[j]] = can_vec
        _fill_lift(x, layout.lift_r[j], r_vec)
        _fill_lift(x, layout.lift_rel[j], rel_vec)
        _fill_lift(x, layout.lift_can[j], can_vec)
    for jid, target in observation.items():
        x[layout.q[jid]] = float(np.sum((target - positions[jid - 1]) ** 2))

    residuals = program.eq_residuals(x)
    max_residual = float(np.max(np.abs(residuals))) if residuals.size else 0.0
    report = EmbedReport(
        max_equality_residual=max_residual,
        min_block_eigenvalue=program.min_block_eigenvalue(x),
        objective=program.objective_value(x),
    )
    return x, report
