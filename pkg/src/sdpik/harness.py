"""Reproducible IK benchmark harness.

Runs the local baselines and the relax-round-refine pipeline over pose sets,
with optional target noise and either full or end-effector observations, and
writes deterministic CSV results plus a self-contained SVG box plot.  All
randomness (noise directions, local restarts) derives from per-trial seed
sequences, so two runs with the same arguments produce byte-identical output
files; wall-clock columns are written as ``NA`` unless timing is explicitly
requested, keeping the default output stable across machines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .conic_solver import SolverOptions
from .kinematics import Observation, ParamVector, Skeleton, forward_kinematics
from .local_ik import (
    GRADIENT_DESCENT,
    TRUST_REGION,
    PenaltyConfig,
    random_init,
    solve_local,
)
from .rounding import sdp_ik

__all__ = [
    "TrialRow",
    "METHOD_GD",
    "METHOD_TR",
    "METHOD_SDP",
    "ALL_METHODS",
    "OBSERVE_ALL",
    "OBSERVE_ENDS",
    "observed_joints",
    "make_observation",
    "add_noise",
    "run_experiment",
    "rows_to_csv",
    "write_csv",
    "summarize",
    "boxplot_svg",
    "CSV_HEADER",
]

METHOD_GD = "local-gd"
METHOD_TR = "local-tr"
METHOD_SDP = "sdp-ik"
ALL_METHODS = (METHOD_GD, METHOD_TR, METHOD_SDP)

OBSERVE_ALL = "all"
OBSERVE_ENDS = "ends"

CSV_HEADER = "pose,method,init,ik_cost,normalized_cost,wall_time,converged,violation"

_LOCAL_METHOD_NAMES = {METHOD_GD: GRADIENT_DESCENT, METHOD_TR: TRUST_REGION}


@dataclass(frozen=True)
class TrialRow:
    pose: int
    method: str
    init: int
    ik_cost: float
    normalized_cost: float
    wall_time: float | None
    converged: bool
    violation: float


def observed_joints(skeleton: Skeleton, mode: str) -> tuple[int, ...]:
    """Joint ids reported to the solver: every joint, or end effectors plus root.

    ``ends`` mimics a sparse marker set: all leaves, the root joint, and the
    last joint of the root cluster (the full root orientation block), so the
    base frame stays observable.
    """
    if mode == OBSERVE_ALL:
        return tuple(j.id for j in skeleton.joints)
    if mode == OBSERVE_ENDS:
        ids = set(skeleton.leaves())
        ids.add(1)
        ids.add(skeleton.root_cluster()[-1])
        return tuple(sorted(ids))
    raise ValueError(f"unknown observation mode {mode!r}; options: {OBSERVE_ALL}, {OBSERVE_ENDS}")


def make_observation(skeleton: Skeleton, pose: ParamVector, mode: str = OBSERVE_ALL) -> Observation:
    """Exact targets for the observed joints of a pose."""
    positions = forward_kinematics(skeleton, pose)
    return Observation.from_pairs([(j, positions[j - 1]) for j in observed_joints(skeleton, mode)])


def add_noise(observation: Observation, r_max: float, rng: np.random.Generator) -> Observation:
    """Perturb each target by a uniform radius in a uniform random direction."""
    if r_max < 0:
        raise ValueError(f"noise radius must be nonnegative, got {r_max}")
    pairs = []
    for jid, target in observation.items():
        direction = rng.normal(size=3)
        norm = float(np.linalg.norm(direction))
        if norm < 1e-12:
            direction = np.array([1.0, 0.0, 0.0])
            norm = 1.0
        radius = rng.uniform(0.0, r_max)
        pairs.append((jid, target + radius * direction / norm))
    return Observation.from_pairs(pairs)


def _trial_seed(*key: int) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def run_experiment(
    skeleton: Skeleton,
    poses: list[ParamVector],
    methods: tuple[str, ...] = ALL_METHODS,
    inits_per_pose: int = 20,
    noise: float = 0.0,
    observed: str = OBSERVE_ALL,
    seed: int = 0,
    timing: bool = False,
    lam: float = 100.0,
    time_budget: float = 30.0,
    solver_options: SolverOptions | None = None,
) -> list[TrialRow]:
    """Run every method on every pose and return one row per trial.

    Local methods restart from ``inits_per_pose`` seeded random guesses; the
    relaxation pipeline is initialization-free and runs once per pose.  The
    ``normalized_cost`` column is each trial's RMS error minus the best local
    RMS error for that pose (or the pose's overall best when no local method
    ran), so 0 marks the best local outcome.
    """
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; options: {ALL_METHODS}")
    rows: list[TrialRow] = []
    for pose_index, pose in enumerate(poses):
        observation = make_observation(skeleton, pose, observed)
        if noise > 0.0:
            noise_rng = np.random.default_rng(np.random.SeedSequence((seed, pose_index)))
            observation = add_noise(observation, noise, noise_rng)

        pose_rows: list[TrialRow] = []
        for method in methods:
            if method == METHOD_SDP:
                start = time.perf_counter()
                result = sdp_ik(
                    skeleton,
                    observation,
                    solver_options=solver_options or SolverOptions(time_budget=time_budget),
                    local_config=PenaltyConfig(lam=lam, time_budget=time_budget),
                )
                elapsed = time.perf_counter() - start
                pose_rows.append(
                    TrialRow(
                        pose=pose_index,
                        method=method,
                        init=0,
                        ik_cost=result.refined_cost,
                        normalized_cost=0.0,
                        wall_time=elapsed if timing else None,
                        converged=result.diagnostics["solver_status"] in ("optimal", "near-optimal")
                        and result.diagnostics["local_converged"],
                        violation=result.diagnostics["local_violation"],
                    )
                )
                continue
            config = PenaltyConfig(lam=lam, method=_LOCAL_METHOD_NAMES[method], time_budget=time_budget)
            for init_index in range(inits_per_pose):
                init = random_init(skeleton, seed=_trial_seed(seed, pose_index, init_index))
                start = time.perf_counter()
                result = solve_local(skeleton, observation, init, config)
                elapsed = time.perf_counter() - start
                pose_rows.append(
                    TrialRow(
                        pose=pose_index,
                        method=method,
                        init=init_index,
                        ik_cost=result.ik_cost,
                        normalized_cost=0.0,
                        wall_time=elapsed if timing else None,
                        converged=result.converged,
                        violation=result.violation,
                    )
                )

        local_costs = [r.ik_cost for r in pose_rows if r.method != METHOD_SDP]
        floor = min(local_costs) if local_costs else min(r.ik_cost for r in pose_rows)
        for row in pose_rows:
            rows.append(
                TrialRow(
                    pose=row.pose,
                    method=row.method,
                    init=row.init,
                    ik_cost=row.ik_cost,
                    normalized_cost=row.ik_cost - floor,
                    wall_time=row.wall_time,
                    converged=row.converged,
                    violation=row.violation,
                )
            )
    return rows


def rows_to_csv(rows: list[TrialRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        wall = "NA" if r.wall_time is None else repr(float(r.wall_time))
        lines.append(
            f"{r.pose},{r.method},{r.init},{repr(float(r.ik_cost))},"
            f"{repr(float(r.normalized_cost))},{wall},"
            f"{'true' if r.converged else 'false'},{repr(float(r.violation))}"
        )
    return "\n".join(lines) + "\n"


def write_csv(rows: list[TrialRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rows_to_csv(rows))


def summarize(rows: list[TrialRow]) -> str:
    """Per-method table: trial counts, cost quartiles, match and convergence rates."""
    methods = sorted({r.method for r in rows})
    lines = [
        f"{'method':<10} {'trials':>6} {'median_cost':>12} {'p90_cost':>12} "
        f"{'best_rate':>9} {'conv_rate':>9}"
    ]
    for method in methods:
        sub = [r for r in rows if r.method == method]
        costs = np.array([r.normalized_cost for r in sub])
        best_rate = float(np.mean(costs <= 1e-6))
        conv = float(np.mean([r.converged for r in sub]))
        lines.append(
            f"{method:<10} {len(sub):>6} {np.median(costs):>12.3e} "
            f"{np.percentile(costs, 90):>12.3e} {best_rate:>9.2f} {conv:>9.2f}"
        )
    return "\n".join(lines) + "\n"


def _boxplot_stats(values: np.ndarray) -> dict:
    q1, med, q3 = (float(np.percentile(values, p)) for p in (25.0, 50.0, 75.0))
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    lo = float(inside.min()) if inside.size else q1
    hi = float(inside.max()) if inside.size else q3
    outliers = values[(values < lo_fence) | (values > hi_fence)]
    return {"q1": q1, "med": med, "q3": q3, "lo": lo, "hi": hi, "outliers": outliers}


def boxplot_svg(rows: list[TrialRow], value: str = "normalized_cost") -> str:
    """Self-contained SVG box plot of a column, grouped by method.

    Boxes span the quartiles with a median line, whiskers reach the farthest
    points within 1.5 IQR of the box, and anything beyond is drawn as a
    circle.  No plotting dependency; coordinates are fixed-precision so the
    output is deterministic.
    """
    methods = sorted({r.method for r in rows})
    if not methods:
        raise ValueError("no rows to plot")
    groups = {
        m: np.array([getattr(r, value) for r in rows if r.method == m], dtype=float) for m in methods
    }
    stats = {m: _boxplot_stats(v) for m, v in groups.items()}

    width, height = 120 + 140 * len(methods), 360
    top, bottom, left = 30, 50, 70
    plot_h = height - top - bottom
    vmin = min(min(s["lo"], *(s["outliers"].tolist() or [s["lo"]])) for s in stats.values())
    vmax = max(max(s["hi"], *(s["outliers"].tolist() or [s["hi"]])) for s in stats.values())
    if vmax <= vmin:
        vmax = vmin + 1.0
    pad = 0.05 * (vmax - vmin)
    vmin, vmax = vmin - pad, vmax + pad

    def sy(v: float) -> float:
        return top + plot_h * (1.0 - (v - vmin) / (vmax - vmin))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for k in range(5):
        v = vmin + (vmax - vmin) * k / 4.0
        y = sy(v)
        parts.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end" '
            f'font-family="sans-serif">{v:.3g}</text>'
        )
    parts.append(
        f'<text x="14" y="{top + plot_h / 2:.2f}" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 14 {top + plot_h / 2:.2f})" text-anchor="middle">{value}</text>'
    )
    box_w = 60
    for k, method in enumerate(methods):
        cx = left + 70 + 140 * k
        s = stats[method]
        y_q1, y_med, y_q3 = sy(s["q1"]), sy(s["med"]), sy(s["q3"])
        y_lo, y_hi = sy(s["lo"]), sy(s["hi"])
        parts += [
            f'<line x1="{cx}" y1="{y_hi:.2f}" x2="{cx}" y2="{y_q3:.2f}" stroke="black"/>',
            f'<line x1="{cx}" y1="{y_q1:.2f}" x2="{cx}" y2="{y_lo:.2f}" stroke="black"/>',
            f'<line x1="{cx - box_w / 4}" y1="{y_hi:.2f}" x2="{cx + box_w / 4}" y2="{y_hi:.2f}" stroke="black"/>',
            f'<line x1="{cx - box_w / 4}" y1="{y_lo:.2f}" x2="{cx + box_w / 4}" y2="{y_lo:.2f}" stroke="black"/>',
            f'<rect x="{cx - box_w / 2}" y="{y_q3:.2f}" width="{box_w}" height="{max(y_q1 - y_q3, 0.5):.2f}" '
            f'fill="#dfe8f5" stroke="black"/>',
            f'<line x1="{cx - box_w / 2}" y1="{y_med:.2f}" x2="{cx + box_w / 2}" y2="{y_med:.2f}" '
            f'stroke="black" stroke-width="2"/>',
            f'<text x="{cx}" y="{height - 22}" font-size="12" text-anchor="middle" '
            f'font-family="sans-serif">{method}</text>',
        ]
        for v in sorted(s["outliers"].tolist()):
            parts.append(
                f'<circle cx="{cx}" cy="{sy(v):.2f}" r="2.5" fill="none" stroke="black"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
