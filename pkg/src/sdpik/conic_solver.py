"""Standard-form conic programs and an embedded primal-dual SDP solver.

A :class:`ConicProgram` minimizes a linear objective over scalar variables x
subject to sparse linear equalities ``A x = b`` and a block-diagonal cone of
PSD constraints whose entries are affine in x:

    minimize    c @ x
    subject to  A @ x == b
                F0_k + sum_i x_i F_ik  is PSD         for every block k

The embedded solver is an infeasible-start primal-dual path-following method
with Nesterov-Todd scaling and a Mehrotra predictor-corrector step.  Every
iteration reduces to one factorization of the sparse augmented KKT system

    [ -(M + eps I)   A^T ] [dx]   [rhs_x]
    [      A       del I ] [dy] = [rhs_y]

with M = F* W^-1 F W^-1 the scaled normal matrix and eps = del = 1e-10 the
diagonal regularization.  The augmented form (rather than a Schur complement
of M) is used because variables that appear only in equalities, such as the
root translation of the IK relaxation, make M structurally singular.

The module also reads and writes the sparse SDPA ``.dat-s`` exchange format
and can delegate solving to an external command through that format.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import splu

__all__ = [
    "PsdBlock",
    "ConicProgram",
    "ProgramBuilder",
    "SolverOptions",
    "SolverReport",
    "solve",
    "solve_external",
    "write_sdpa",
    "read_sdpa",
    "EXTERNAL_SOLVER_ENV",
]

EXTERNAL_SOLVER_ENV = "SDPIK_SOLVER_CMD"

STATUS_OPTIMAL = "optimal"
STATUS_NEAR_OPTIMAL = "near-optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_TIME_OUT = "time-out"
STATUS_NUMERICAL_FAILURE = "numerical-failure"

# Diagonal regularization of the augmented KKT system.
_KKT_REGULARIZATION = 1e-10
# Fraction-to-boundary factor keeping iterates strictly interior.
_STEP_FRACTION = 0.98


@dataclass(eq=False)
class PsdBlock:
    """One PSD block with affine entries, stored as upper-triangle COO.

    ``var[e] == -1`` marks a constant entry; otherwise ``var[e]`` indexes the
    scalar variable multiplying the entry.  Each stored entry ``(i, j, v)``
    with ``i <= j`` stands for the symmetric pair ``B[i, j] = B[j, i] = v``.
    Diagonal blocks (``diag=True``) may only carry ``i == j`` entries and act
    as elementwise nonnegativity constraints.
    """

    label: str
    size: int
    var: np.ndarray
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray
    diag: bool = False

    def __post_init__(self):
        self.var = np.asarray(self.var, dtype=np.int64)
        self.row = np.asarray(self.row, dtype=np.int64)
        self.col = np.asarray(self.col, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=float)
        if not (self.var.shape == self.row.shape == self.col.shape == self.val.shape):
            raise ValueError(f"block {self.label}: entry arrays must share a shape")
        if self.row.size and (self.row.min() < 0 or self.col.max() >= self.size):
            raise ValueError(f"block {self.label}: entry indices out of range")
        if np.any(self.row > self.col):
            raise ValueError(f"block {self.label}: entries must satisfy row <= col")
        if self.diag and np.any(self.row != self.col):
            raise ValueError(f"block {self.label}: diagonal blocks allow only diagonal entries")

    def constant(self) -> np.ndarray:
        """Constant part F0 as a dense symmetric matrix (or vector when diagonal)."""
        mask = self.var == -1
        if self.diag:
            out = np.zeros(self.size)
            np.add.at(out, self.row[mask], self.val[mask])
            return out
        out = np.zeros((self.size, self.size))
        np.add.at(out, (self.row[mask], self.col[mask]), self.val[mask])
        off = mask & (self.row != self.col)
        np.add.at(out, (self.col[off], self.row[off]), self.val[off])
        return out

    def materialize(self, x: np.ndarray) -> np.ndarray:
        """Block value F0 + sum_i x_i F_i at ``x`` (vector when diagonal)."""
        weight = np.where(self.var >= 0, x[np.maximum(self.var, 0)], 1.0)
        coef = self.val * weight
        if self.diag:
            out = np.zeros(self.size)
            np.add.at(out, self.row, coef)
            return out
        out = np.zeros((self.size, self.size))
        np.add.at(out, (self.row, self.col), coef)
        off = self.row != self.col
        np.add.at(out, (self.col[off], self.row[off]), coef[off])
        return out


@dataclass(eq=False)
class ConicProgram:
    """Linear objective, sparse equalities, and affine PSD blocks over x."""

    n_vars: int
    objective: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    blocks: list[PsdBlock]
    obj_const: float = 0.0
    eq_labels: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(self.n_vars)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.A = sp.csr_matrix(self.A, shape=(self.b.size, self.n_vars))
        for blk in self.blocks:
            if blk.var.size and blk.var.max() >= self.n_vars:
                raise ValueError(f"block {blk.label} references variable beyond n_vars")

    @property
    def n_equalities(self) -> int:
        return self.b.size

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective @ x) + self.obj_const

    def eq_residuals(self, x: np.ndarray) -> np.ndarray:
        if self.n_equalities == 0:
            return np.zeros(0)
        return self.A @ x - self.b

    def block_matrices(self, x: np.ndarray) -> list[np.ndarray]:
        """Dense block values at ``x``; diagonal blocks come back as diagonal matrices."""
        out = []
        for blk in self.blocks:
            value = blk.materialize(x)
            out.append(np.diag(value) if blk.diag else value)
        return out

    def min_block_eigenvalue(self, x: np.ndarray) -> float:
        worst = math.inf
        for blk in self.blocks:
            value = blk.materialize(x)
            if blk.diag:
                worst = min(worst, float(value.min()) if value.size else math.inf)
            else:
                worst = min(worst, float(np.linalg.eigvalsh(value)[0]))
        return worst


class ProgramBuilder:
    """Incremental construction of a :class:`ConicProgram`."""

    def __init__(self):
        self.n_vars = 0
        self._obj: list[tuple[int, float]] = []
        self.obj_const = 0.0
        self._eq_rows: list[list[tuple[int, float]]] = []
        self._eq_rhs: list[float] = []
        self.eq_labels: list[str] = []
        self.blocks: list[PsdBlock] = []
        self._block_entries: list[tuple[list, list, list, list]] = []
        self._block_meta: list[tuple[str, int, bool]] = []
        self.metadata: dict = {}

    def alloc(self, count: int) -> slice:
        start = self.n_vars
        self.n_vars += count
        return slice(start, start + count)

    def add_objective(self, index: int, coef: float) -> None:
        self._obj.append((index, coef))

    def add_equality(self, terms, rhs: float, label: str = "") -> None:
        """Append the row ``sum coef * x[index] == rhs``; zero coefficients are dropped."""
        row = [(int(i), float(c)) for i, c in terms if c != 0.0]
        self._eq_rows.append(row)
        self._eq_rhs.append(float(rhs))
        self.eq_labels.append(label)

    def add_block(self, label: str, size: int, diag: bool = False) -> int:
        self._block_meta.append((label, size, diag))
        self._block_entries.append(([], [], [], []))
        return len(self._block_meta) - 1

    def set_entry(self, block: int, i: int, j: int, value: float, var: int = -1) -> None:
        """Symmetric entry (i, j) of a block; ``var`` = -1 for the constant part."""
        if value == 0.0:
            return
        if i > j:
            i, j = j, i
        vs, rs, cs, xs = self._block_entries[block]
        vs.append(var)
        rs.append(i)
        cs.append(j)
        xs.append(value)

    def build(self) -> ConicProgram:
        objective = np.zeros(self.n_vars)
        for i, c in self._obj:
            objective[i] += c
        rows, cols, vals = [], [], []
        for e, row in enumerate(self._eq_rows):
            for i, c in row:
                rows.append(e)
                cols.append(i)
                vals.append(c)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self._eq_rows), self.n_vars))
        blocks = [
            PsdBlock(label=label, size=size, diag=diag, var=np.array(vs, dtype=np.int64),
                     row=np.array(rs, dtype=np.int64), col=np.array(cs, dtype=np.int64),
                     val=np.array(xs, dtype=float))
            for (label, size, diag), (vs, rs, cs, xs) in zip(self._block_meta, self._block_entries)
        ]
        return ConicProgram(
            n_vars=self.n_vars,
            objective=objective,
            A=A,
            b=np.array(self._eq_rhs, dtype=float),
            blocks=blocks,
            obj_const=self.obj_const,
            eq_labels=list(self.eq_labels),
            metadata=dict(self.metadata),
        )


@dataclass(frozen=True)
class SolverOptions:
    gap_tolerance: float = 1e-7
    feasibility_tolerance: float = 1e-8
    max_iterations: int = 200
    time_budget: float | None = None
    verbose: bool = False


@dataclass(eq=False)
class SolverReport:
    status: str
    x: np.ndarray
    objective: float
    dual_objective: float
    gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    wall_time: float
    block_values: list[np.ndarray] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL)


# ===== embedded interior-point solver =====


class _DenseCone:
    """Per-block precomputation for non-diagonal PSD blocks."""

    def __init__(self, blk: PsdBlock):
        self.size = blk.size
        self.f0 = blk.constant()
        var_mask = blk.var >= 0
        self.var_idx = np.unique(blk.var[var_mask])
        pos = {v: k for k, v in enumerate(self.var_idx)}
        self.coeff = np.zeros((self.var_idx.size, blk.size, blk.size))
        for v, i, j, a in zip(blk.var[var_mask], blk.row[var_mask], blk.col[var_mask], blk.val[var_mask]):
            k = pos[v]
            self.coeff[k, i, j] += a
            if i != j:
                self.coeff[k, j, i] += a
        # Mesh for scattering the local normal matrix into global COO arrays.
        self.mesh_r = np.repeat(self.var_idx, self.var_idx.size)
        self.mesh_c = np.tile(self.var_idx, self.var_idx.size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """F(x) linear part plus F0."""
        if self.var_idx.size == 0:
            return self.f0.copy()
        return self.f0 + np.einsum("k,kij->ij", x[self.var_idx], self.coeff)

    def apply_linear(self, dx: np.ndarray) -> np.ndarray:
        if self.var_idx.size == 0:
            return np.zeros((self.size, self.size))
        return np.einsum("k,kij->ij", dx[self.var_idx], self.coeff)

    def adjoint_into(self, Z: np.ndarray, out: np.ndarray) -> None:
        if self.var_idx.size:
            out[self.var_idx] += np.einsum("kij,ij->k", self.coeff, Z)


class _DiagCone:
    """Diagonal (elementwise nonnegative) block."""

    def __init__(self, blk: PsdBlock, n_vars: int):
        self.size = blk.size
        self.f0 = blk.constant()
        var_mask = blk.var >= 0
        self.D = sp.csr_matrix(
            (blk.val[var_mask], (blk.row[var_mask], blk.var[var_mask])), shape=(blk.size, n_vars)
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.f0 + self.D @ x

    def apply_linear(self, dx: np.ndarray) -> np.ndarray:
        return self.D @ dx

    def adjoint_into(self, z: np.ndarray, out: np.ndarray) -> None:
        out += self.D.T @ z


def _max_step_dense(S: np.ndarray, dS: np.ndarray, chol: np.ndarray) -> float:
    """Largest alpha with S + alpha dS PSD, given chol(S)."""
    inner = solve_triangular(chol, dS, lower=True)
    inner = solve_triangular(chol, inner.T, lower=True).T
    lam_min = float(np.linalg.eigvalsh(0.5 * (inner + inner.T))[0])
    if lam_min >= 0.0:
        return math.inf
    return -1.0 / lam_min


def _max_step_diag(s: np.ndarray, ds: np.ndarray) -> float:
    neg = ds < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-s[neg] / ds[neg]))


def solve(program: ConicProgram, options: SolverOptions | None = None) -> SolverReport:
    """Solve the program with the embedded NT-scaled predictor-corrector method."""
    opt = options or SolverOptions()
    start = time.monotonic()
    deadline = math.inf if opt.time_budget is None else start + opt.time_budget

    n = program.n_vars
    m = program.n_equalities
    c = program.objective.copy()

    # Equality rows are scaled to unit 2-norm; the scaled duals are internal only.
    A = program.A.tocsr().astype(float)
    b = program.b.copy()
    if m:
        row_norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        row_norms[row_norms == 0] = 1.0
        scale = sp.diags(1.0 / row_norms)
        A = scale @ A
        b = b / row_norms

    dense_cones: list[_DenseCone] = []
    diag_cones: list[_DiagCone] = []
    cone_kind: list[tuple[str, int]] = []
    for blk in program.blocks:
        if blk.diag:
            diag_cones.append(_DiagCone(blk, n))
            cone_kind.append(("diag", len(diag_cones) - 1))
        else:
            dense_cones.append(_DenseCone(blk))
            cone_kind.append(("dense", len(dense_cones) - 1))
    total_dim = sum(cone.size for cone in dense_cones) + sum(cone.size for cone in diag_cones)
    if total_dim == 0:
        raise ValueError("program has no PSD blocks")

    def fadj(Zd: list[np.ndarray], zv: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(n)
        for cone, Z in zip(dense_cones, Zd):
            cone.adjoint_into(Z, out)
        for cone, z in zip(diag_cones, zv):
            cone.adjoint_into(z, out)
        return out

    # Infeasible start: x = 0, y = 0, S = Z = eta I per block.
    x = np.zeros(n)
    y = np.zeros(m)
    Sd = [(1.0 + np.linalg.norm(cone.f0)) * np.eye(cone.size) for cone in dense_cones]
    Zd = [(1.0 + np.linalg.norm(cone.f0)) * np.eye(cone.size) for cone in dense_cones]
    sv = [(1.0 + np.linalg.norm(cone.f0)) * np.ones(cone.size) for cone in diag_cones]
    zv = [(1.0 + np.linalg.norm(cone.f0)) * np.ones(cone.size) for cone in diag_cones]

    b_scale = 1.0 + (float(np.max(np.abs(b))) if m else 0.0)
    c_scale = 1.0 + (float(np.max(np.abs(c))) if n else 0.0)
    f0_scale = 1.0 + max(
        [float(np.max(np.abs(cone.f0))) if cone.f0.size else 0.0 for cone in dense_cones + diag_cones],
        default=0.0,
    )

    best = None
    best_merit = math.inf
    status = STATUS_NEAR_OPTIMAL
    message = ""
    iterations = 0
    tiny_steps = 0
    stalled = 0
    last_alpha = (1.0, 1.0)
    # Cholesky factors of S and Z are maintained across iterations; steps are
    # backtracked until the factorization succeeds, so they always exist.
    chol_s = [np.linalg.cholesky(S) for S in Sd]
    chol_z = [np.linalg.cholesky(Z) for Z in Zd]

    def record(metrics):
        nonlocal best, best_merit
        merit = max(metrics["feas_p"], metrics["feas_d"], metrics["gap"])
        if merit < 0.9 * best_merit:
            best_merit = merit
            best = dict(metrics, x=x.copy())
            return True
        if merit < best_merit:
            best_merit = merit
            best = dict(metrics, x=x.copy())
        return False

    for iteration in range(opt.max_iterations):
        iterations = iteration
        # Residuals of the current iterate.
        rp = b - A @ x if m else np.zeros(0)
        rs_d = [S - cone.apply(x) for S, cone in zip(Sd, dense_cones)]
        rs_v = [s - cone.apply(x) for s, cone in zip(sv, diag_cones)]
        rd = c - (A.T @ y if m else 0.0) - fadj(Zd, zv)

        trace_sz = sum(float(np.sum(S * Z)) for S, Z in zip(Sd, Zd)) + sum(
            float(s @ z) for s, z in zip(sv, zv)
        )
        mu = trace_sz / total_dim
        pobj = float(c @ x) + program.obj_const
        dobj = (float(b @ y) if m else 0.0) - sum(
            float(np.sum(cone.f0 * Z)) for cone, Z in zip(dense_cones, Zd)
        ) - sum(float(cone.f0 @ z) for cone, z in zip(diag_cones, zv)) + program.obj_const

        feas_p = max(
            float(np.max(np.abs(rp))) / b_scale if m else 0.0,
            max([float(np.max(np.abs(R))) for R in rs_d + rs_v if R.size], default=0.0) / f0_scale,
        )
        feas_d = float(np.max(np.abs(rd))) / c_scale if n else 0.0
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        improved = record({"feas_p": feas_p, "feas_d": feas_d, "gap": gap, "pobj": pobj, "dobj": dobj})
        stalled = 0 if improved else stalled + 1

        if opt.verbose:
            print(
                f"iter {iteration:3d}  pobj {pobj: .6e}  dobj {dobj: .6e}  "
                f"gap {gap:.2e}  feas {feas_p:.2e}/{feas_d:.2e}  mu {mu:.2e}  "
                f"step {last_alpha[0]:.2e}/{last_alpha[1]:.2e}"
            )

        if feas_p <= opt.feasibility_tolerance and feas_d <= opt.feasibility_tolerance and gap <= opt.gap_tolerance:
            status = STATUS_OPTIMAL
            break
        if stalled >= 10:
            message = "no meaningful progress over 10 iterations"
            break
        if mu < 1e-13 and feas_p <= 1e-7:
            message = "complementarity exhausted"
            break
        if time.monotonic() > deadline:
            status = STATUS_TIME_OUT
            message = "time budget exhausted"
            break
        # Primal infeasibility shows up as an unbounded, nearly feasible dual.
        if dobj > 1e8 * (1.0 + abs(pobj)) and feas_d <= 1e-6:
            status = STATUS_INFEASIBLE
            message = "dual objective diverging; primal judged infeasible"
            break

        # Nesterov-Todd scaling point per block.
        Ts, Tinvs, lams, Winvs = [], [], [], []
        numerical_trouble = False
        for Ls, Lz in zip(chol_s, chol_z):
            U, sig, Vt = np.linalg.svd(Lz.T @ Ls)
            if sig.min() <= 0 or not np.all(np.isfinite(sig)):
                numerical_trouble = True
                break
            T = Ls @ Vt.T @ np.diag(sig**-0.5)
            Tinv = np.diag(sig**0.5) @ Vt @ solve_triangular(Ls, np.eye(Ls.shape[0]), lower=True)
            Ts.append(T)
            Tinvs.append(Tinv)
            lams.append(sig)
            Winvs.append(Tinv.T @ Tinv)
        if numerical_trouble:
            status = STATUS_NUMERICAL_FAILURE
            message = "singular NT scaling"
            break
        lam_v = [np.sqrt(s * z) for s, z in zip(sv, zv)]
        winv2_v = [z / s for s, z in zip(sv, zv)]

        # Scaled normal matrix M = F* W^-1 F W^-1, assembled in COO form.
        coo_r, coo_c, coo_v = [], [], []
        for cone, Winv in zip(dense_cones, Winvs):
            if cone.var_idx.size == 0:
                continue
            G = np.einsum("ab,kbc,cd->kad", Winv, cone.coeff, Winv)
            local = np.einsum("kij,lij->kl", G, cone.coeff)
            coo_r.append(cone.mesh_r)
            coo_c.append(cone.mesh_c)
            coo_v.append(local.ravel())
        M = sp.csr_matrix((n, n))
        if coo_r:
            M = sp.csr_matrix(
                (np.concatenate(coo_v), (np.concatenate(coo_r), np.concatenate(coo_c))), shape=(n, n)
            )
        for cone, w2 in zip(diag_cones, winv2_v):
            M = M + cone.D.T @ sp.diags(w2) @ cone.D

        eps = _KKT_REGULARIZATION
        if m:
            K0 = sp.bmat([[-M, A.T], [A, None]], format="csc")
            reg = sp.diags(np.concatenate([-eps * np.ones(n), eps * np.ones(m)]))
            K = (K0 + reg).tocsc()
        else:
            K0 = (-M).tocsc()
            K = (K0 - eps * sp.eye(n)).tocsc()
        try:
            lu = splu(K)
        except RuntimeError:
            status = STATUS_NUMERICAL_FAILURE
            message = "singular KKT system"
            break

        def kkt_solve(rhs):
            # Refinement against the unregularized operator, guarded: when K0
            # is singular (redundant equality rows) the passes can diverge,
            # so each one must cut the residual to be kept.
            sol = lu.solve(rhs)
            res = rhs - K0 @ sol
            best_norm = float(np.linalg.norm(res))
            for _ in range(3):
                cand = sol + lu.solve(res)
                res_cand = rhs - K0 @ cand
                norm_cand = float(np.linalg.norm(res_cand))
                if norm_cand >= 0.5 * best_norm:
                    if norm_cand < best_norm:
                        sol = cand
                    break
                sol, res, best_norm = cand, res_cand, norm_cand
            return sol

        def direction(E_d, e_v):
            """Newton direction for complementarity targets E (scaled space)."""
            acc = np.zeros(n)
            for cone, Tinv, Winv, E, rs in zip(dense_cones, Tinvs, Winvs, E_d, rs_d):
                cone.adjoint_into(Tinv.T @ E @ Tinv + Winv @ rs @ Winv, acc)
            for cone, w2, e, rs in zip(diag_cones, winv2_v, e_v, rs_v):
                cone.adjoint_into(e * np.sqrt(w2) + w2 * rs, acc)
            rhs_x = rd - acc
            rhs = np.concatenate([rhs_x, rp]) if m else rhs_x
            sol = kkt_solve(rhs)
            dx = sol[:n]
            dy = sol[n:] if m else np.zeros(0)
            dS_d = [cone.apply_linear(dx) - rs for cone, rs in zip(dense_cones, rs_d)]
            ds_v = [cone.apply_linear(dx) - rs for cone, rs in zip(diag_cones, rs_v)]
            dZ_d = [
                Tinv.T @ E @ Tinv - Winv @ dS @ Winv
                for Tinv, Winv, E, dS in zip(Tinvs, Winvs, E_d, dS_d)
            ]
            dz_v = [e * np.sqrt(w2) - w2 * ds for w2, e, ds in zip(winv2_v, e_v, ds_v)]
            return dx, dy, dS_d, ds_v, dZ_d, dz_v

        def max_steps(dS_list, ds_list, dZ_list, dz_list):
            ap = math.inf
            ad = math.inf
            for S, dS, Ls in zip(Sd, dS_list, chol_s):
                ap = min(ap, _max_step_dense(S, dS, Ls))
            for Z, dZ, Lz in zip(Zd, dZ_list, chol_z):
                ad = min(ad, _max_step_dense(Z, dZ, Lz))
            for s, ds in zip(sv, ds_list):
                ap = min(ap, _max_step_diag(s, ds))
            for z, dz in zip(zv, dz_list):
                ad = min(ad, _max_step_diag(z, dz))
            return ap, ad

        # Predictor: drive complementarity toward zero.
        E_aff = [np.diag(-lam) for lam in lams]
        e_aff = [-lam for lam in lam_v]
        dx_a, dy_a, dS_a, ds_a, dZ_a, dz_a = direction(E_aff, e_aff)

        raw_p, raw_d = max_steps(dS_a, ds_a, dZ_a, dz_a)
        alpha_p = min(1.0, raw_p)
        alpha_d = min(1.0, raw_d)

        tr_aff = 0.0
        for S, dS, Z, dZ in zip(Sd, dS_a, Zd, dZ_a):
            tr_aff += float(np.sum((S + alpha_p * dS) * (Z + alpha_d * dZ)))
        for s, ds, z, dz in zip(sv, ds_a, zv, dz_a):
            tr_aff += float((s + alpha_p * ds) @ (z + alpha_d * dz))
        mu_aff = max(tr_aff, 0.0) / total_dim
        sigma = min(1.0, max((mu_aff / mu) ** 3, 1e-12))

        # Corrector: recenter and add the Mehrotra second-order term.
        E_cor = []
        for Tinv, T, lam, dS, dZ in zip(Tinvs, Ts, lams, dS_a, dZ_a):
            Ds = Tinv @ dS @ Tinv.T
            Dz = T.T @ dZ @ T
            cross = 0.5 * (Ds @ Dz + Dz @ Ds)
            target = sigma * mu * np.eye(lam.size) - np.diag(lam**2) - cross
            denom = lam[:, None] + lam[None, :]
            E_cor.append(2.0 * target / denom)
        e_cor = []
        for lam, w2, ds, dz in zip(lam_v, winv2_v, ds_a, dz_a):
            Ds = ds * np.sqrt(w2)
            Dz = dz / np.sqrt(w2)
            target = sigma * mu - lam**2 - Ds * Dz
            e_cor.append(target / lam)

        dx, dy, dS_d, ds_v2, dZ_d, dz_v2 = direction(E_cor, e_cor)

        raw_p, raw_d = max_steps(dS_d, ds_v2, dZ_d, dz_v2)
        alpha_p = min(1.0, _STEP_FRACTION * raw_p)
        alpha_d = min(1.0, _STEP_FRACTION * raw_d)

        if max(alpha_p, alpha_d) < 1e-4:
            # The combined direction is blocked (ill-conditioned endgame).
            # Fall back to a pure centering step to regain the central path.
            E_cent = [np.diag((mu - lam**2) / lam) for lam in lams]
            e_cent = [(mu - lam**2) / lam for lam in lam_v]
            dx, dy, dS_d, ds_v2, dZ_d, dz_v2 = direction(E_cent, e_cent)
            raw_p, raw_d = max_steps(dS_d, ds_v2, dZ_d, dz_v2)
            alpha_p = min(1.0, _STEP_FRACTION * raw_p)
            alpha_d = min(1.0, _STEP_FRACTION * raw_d)

        if not (np.isfinite(alpha_p) and np.isfinite(alpha_d)):
            status = STATUS_NUMERICAL_FAILURE
            message = "non-finite step length"
            break

        # Take the step, backing off until both iterates factor as PD.
        stepped = False
        for _ in range(25):
            Sd_new = [S + alpha_p * dS for S, dS in zip(Sd, dS_d)]
            sv_new = [s + alpha_p * ds for s, ds in zip(sv, ds_v2)]
            Zd_new = [Z + alpha_d * dZ for Z, dZ in zip(Zd, dZ_d)]
            zv_new = [z + alpha_d * dz for z, dz in zip(zv, dz_v2)]
            try:
                chol_s_new = [np.linalg.cholesky(S) for S in Sd_new]
                chol_z_new = [np.linalg.cholesky(Z) for Z in Zd_new]
            except np.linalg.LinAlgError:
                alpha_p *= 0.5
                alpha_d *= 0.5
                continue
            if any(np.any(s <= 0) for s in sv_new) or any(np.any(z <= 0) for z in zv_new):
                alpha_p *= 0.5
                alpha_d *= 0.5
                continue
            stepped = True
            break
        if not stepped:
            status = STATUS_NUMERICAL_FAILURE
            message = "could not stay inside the PSD cone"
            break
        if max(alpha_p, alpha_d) < 1e-8:
            tiny_steps += 1
            if tiny_steps >= 2:
                message = "step lengths collapsed"
                break
        else:
            tiny_steps = 0

        x = x + alpha_p * dx
        y = y + alpha_d * dy if m else y
        Sd, sv, Zd, zv = Sd_new, sv_new, Zd_new, zv_new
        chol_s, chol_z = chol_s_new, chol_z_new
        last_alpha = (alpha_p, alpha_d)
        if not np.all(np.isfinite(x)):
            status = STATUS_NUMERICAL_FAILURE
            message = "iterate diverged"
            break
    else:
        status = STATUS_NEAR_OPTIMAL
        message = "iteration limit reached"

    if best is None:
        best = {"feas_p": math.inf, "feas_d": math.inf, "gap": math.inf, "pobj": math.nan, "dobj": math.nan, "x": x}
    if status not in (STATUS_OPTIMAL, STATUS_INFEASIBLE, STATUS_TIME_OUT):
        # Grade the best iterate on its own tolerances; late numerical
        # breakdown is the normal endgame on degenerate instances and does
        # not invalidate an already-good certificate.
        if (
            best["feas_p"] <= opt.feasibility_tolerance
            and best["feas_d"] <= opt.feasibility_tolerance
            and best["gap"] <= opt.gap_tolerance
        ):
            status = STATUS_OPTIMAL
        elif best["feas_p"] <= 1e-5 and max(best["feas_d"], best["gap"]) <= 1e-3:
            status = STATUS_NEAR_OPTIMAL
        else:
            status = STATUS_NUMERICAL_FAILURE
            message = message or "no iterate reached near-optimal tolerances"

    x_best = best["x"]
    return SolverReport(
        status=status,
        x=x_best,
        objective=program.objective_value(x_best),
        dual_objective=float(best["dobj"]),
        gap=float(best["gap"]),
        primal_infeasibility=float(best["feas_p"]),
        dual_infeasibility=float(best["feas_d"]),
        iterations=iterations + 1,
        wall_time=time.monotonic() - start,
        block_values=program.block_matrices(x_best),
        message=message,
    )


# ===== SDPA sparse format =====


def _format_float(v: float) -> str:
    return repr(float(v))


def write_sdpa(program: ConicProgram, path) -> None:
    """Serialize to the sparse SDPA ``.dat-s`` format.

    The file encodes ``min c @ x  s.t.  sum_i x_i F_i - F0 PSD``; linear
    equalities become paired inequalities inside one trailing diagonal block.
    Output is deterministic: entries are sorted by (matrix, block, row, col)
    and floats use shortest round-trip formatting.
    """
    if program.obj_const != 0.0:
        raise ValueError("SDPA format cannot represent a constant objective term")
    m_eq = program.n_equalities
    sizes = [(-blk.size if blk.diag else blk.size) for blk in program.blocks]
    if m_eq:
        sizes.append(-2 * m_eq)
    entries: list[tuple[int, int, int, int, str]] = []

    for bi, blk in enumerate(program.blocks, start=1):
        for var, i, j, v in zip(blk.var, blk.row, blk.col, blk.val):
            if v == 0.0:
                continue
            if var == -1:
                # File stores the SDPA F0, which is the negated constant part.
                entries.append((0, bi, int(i) + 1, int(j) + 1, _format_float(-v)))
            else:
                entries.append((int(var) + 1, bi, int(i) + 1, int(j) + 1, _format_float(v)))
    if m_eq:
        eq_block = len(program.blocks) + 1
        A = program.A.tocoo()
        for e, i, a in zip(A.row, A.col, A.data):
            if a == 0.0:
                continue
            slot = 2 * int(e) + 1
            entries.append((int(i) + 1, eq_block, slot, slot, _format_float(a)))
            entries.append((int(i) + 1, eq_block, slot + 1, slot + 1, _format_float(-a)))
        for e, rhs in enumerate(program.b):
            if rhs == 0.0:
                continue
            slot = 2 * e + 1
            entries.append((0, eq_block, slot, slot, _format_float(rhs)))
            entries.append((0, eq_block, slot + 1, slot + 1, _format_float(-rhs)))
    entries.sort(key=lambda t: t[:4])

    lines = [
        str(program.n_vars),
        str(len(sizes)),
        " ".join(str(s) for s in sizes),
        " ".join(_format_float(v) for v in program.objective),
    ]
    lines += [f"{k} {bi} {i} {j} {v}" for k, bi, i, j, v in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sdpa(path) -> ConicProgram:
    """Parse a sparse SDPA file back into a :class:`ConicProgram`.

    Equalities serialized by :func:`write_sdpa` come back as a diagonal block
    of paired inequalities; the feasible set and objective are unchanged.
    """
    tokens: list[str] = []
    n_header = 0
    with open(Path(path), "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("*") or line.startswith('"'):
                continue
            for ch in "{}(),":
                line = line.replace(ch, " ")
            parts = line.split()
            tokens.append((lineno, parts))
    flat = [(lineno, tok) for lineno, parts in tokens for tok in parts]

    pos = 0

    def take(count, kind, what):
        nonlocal pos
        if pos + count > len(flat):
            raise ValueError(f"SDPA file ended early while reading {what}")
        out = []
        for k in range(count):
            lineno, tok = flat[pos + k]
            try:
                out.append(kind(tok))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad token {tok!r} for {what}") from exc
        pos += count
        return out

    n_vars = take(1, int, "variable count")[0]
    n_blocks = take(1, int, "block count")[0]
    if n_vars < 0 or n_blocks <= 0:
        raise ValueError("SDPA header must declare positive dimensions")
    sizes = take(n_blocks, int, "block sizes")
    objective = np.array(take(n_vars, float, "objective"), dtype=float)

    per_block: list[tuple[list, list, list, list]] = [([], [], [], []) for _ in sizes]
    remaining = len(flat) - pos
    if remaining % 5 != 0:
        lineno = flat[pos][0] if pos < len(flat) else -1
        raise ValueError(f"line {lineno}: matrix entries must come in 5-tuples")
    for _ in range(remaining // 5):
        k = take(1, int, "matrix index")[0]
        bi = take(1, int, "block index")[0]
        i = take(1, int, "row index")[0]
        j = take(1, int, "column index")[0]
        v = take(1, float, "entry value")[0]
        if not (0 <= k <= n_vars):
            raise ValueError(f"matrix index {k} outside [0, {n_vars}]")
        if not (1 <= bi <= n_blocks):
            raise ValueError(f"block index {bi} outside [1, {n_blocks}]")
        size = abs(sizes[bi - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise ValueError(f"entry ({i}, {j}) outside block {bi} of size {size}")
        if i > j:
            i, j = j, i
        vs, rs, cs, xs = per_block[bi - 1]
        # matno 0 is the SDPA F0; our constant part is its negation.
        vs.append(k - 1)
        rs.append(i - 1)
        cs.append(j - 1)
        xs.append(-v if k == 0 else v)

    blocks = []
    for bi, size in enumerate(sizes):
        vs, rs, cs, xs = per_block[bi]
        blocks.append(
            PsdBlock(
                label=f"sdpa-block-{bi + 1}",
                size=abs(size),
                diag=size < 0,
                var=np.array(vs, dtype=np.int64),
                row=np.array(rs, dtype=np.int64),
                col=np.array(cs, dtype=np.int64),
                val=np.array(xs, dtype=float),
            )
        )
    return ConicProgram(
        n_vars=n_vars,
        objective=objective,
        A=sp.csr_matrix((0, n_vars)),
        b=np.zeros(0),
        blocks=blocks,
        metadata={"source": str(path)},
    )


def solve_external(
    program: ConicProgram, command: str | None = None, options: SolverOptions | None = None
) -> SolverReport:
    """Solve through an external command speaking the SDPA format.

    The command (or the ``SDPIK_SOLVER_CMD`` environment variable) is invoked
    as ``cmd problem.dat-s certificate.txt``; the certificate's first
    ``n_vars`` whitespace-separated numbers are taken as the primal solution,
    from which objective and feasibility are recomputed locally.
    """
    opt = options or SolverOptions()
    if command is None:
        command = os.environ.get(EXTERNAL_SOLVER_ENV, "")
    if not command:
        raise ValueError(f"no external solver command; set {EXTERNAL_SOLVER_ENV} or pass one")
    start = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="sdpik-bridge-") as tmp:
        problem = Path(tmp) / "problem.dat-s"
        certificate = Path(tmp) / "certificate.txt"
        write_sdpa(program, problem)
        proc = subprocess.run(
            [*shlex.split(command), str(problem), str(certificate)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"external solver failed (exit {proc.returncode}): {proc.stderr.strip()}")
        values = []
        for tok in certificate.read_text(encoding="utf-8").split():
            try:
                values.append(float(tok))
            except ValueError:
                continue
        if len(values) < program.n_vars:
            raise ValueError(
                f"certificate holds {len(values)} numbers; need at least {program.n_vars}"
            )
    x = np.array(values[: program.n_vars])
    residual = program.eq_residuals(x)
    feas_p = float(np.max(np.abs(residual))) if residual.size else 0.0
    min_eig = program.min_block_eigenvalue(x)
    within = feas_p <= 1e-6 and min_eig >= -1e-6
    return SolverReport(
        status=STATUS_OPTIMAL if within else STATUS_NEAR_OPTIMAL,
        x=x,
        objective=program.objective_value(x),
        dual_objective=math.nan,
        gap=math.nan,
        primal_infeasibility=feas_p,
        dual_infeasibility=math.nan,
        iterations=0,
        wall_time=time.monotonic() - start,
        block_values=program.block_matrices(x),
        message=f"external command: {command}",
    )
