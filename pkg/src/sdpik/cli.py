"""Command line interface.

Subcommands:

  solve       solve one IK instance (targets from a file, or synthesized
              from a seeded benchmark pose) and print the result as JSON
  bench       run the benchmark harness over a pose set and write CSV,
              summary, and box plot files
  export-sdp  compile an instance and write it in sparse SDPA format
  validate    load a skeleton file, compile it, and check that a seeded
              ground-truth pose embeds feasibly into the relaxation

Exit codes: 0 on success, 2 for configuration errors (bad arguments or
files), 3 when the solver fails to produce a usable answer.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import assets, harness
from .conic_solver import SolverOptions, write_sdpa
from .kinematics import Observation, load_skeleton
from .local_ik import (
    GRADIENT_DESCENT,
    TRUST_REGION,
    PenaltyConfig,
    random_init,
    solve_local,
)
from .rounding import sdp_ik
from .sdp_relaxation import block_census, build_sdp, embed_ground_truth

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class _ConfigError(Exception):
    pass


def _load_any_skeleton(spec: str):
    if spec in assets.BUILTIN_SKELETONS:
        return assets.builtin_skeleton(spec)
    path = Path(spec)
    if not path.exists():
        raise _ConfigError(f"skeleton {spec!r} is neither a builtin name nor an existing file")
    try:
        return load_skeleton(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _ConfigError(f"could not load skeleton {spec!r}: {exc}") from exc


def _load_targets(path: str) -> list[tuple[int, np.ndarray]]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _ConfigError(f"could not read targets {path!r}: {exc}") from exc
    if isinstance(data, dict):
        items = data.items()
    elif isinstance(data, list):
        items = ((entry["joint"], entry["target"]) for entry in data)
    else:
        raise _ConfigError("targets JSON must be an object {joint: [x,y,z]} or a list of entries")
    try:
        return [(int(j), np.asarray(t, dtype=float)) for j, t in items]
    except (TypeError, ValueError) as exc:
        raise _ConfigError(f"malformed targets in {path!r}: {exc}") from exc


def _instance(args) -> tuple[object, Observation]:
    """Skeleton plus observation from --targets or a synthesized --pose-seed."""
    skeleton = _load_any_skeleton(args.skeleton)
    if args.targets is not None:
        observation = Observation.from_pairs(_load_targets(args.targets))
    elif args.pose_seed is not None:
        pose = random_init(skeleton, seed=args.pose_seed)
        observation = harness.make_observation(skeleton, pose, args.observed)
        if args.noise > 0.0:
            rng = np.random.default_rng(np.random.SeedSequence((args.seed, args.pose_seed)))
            observation = harness.add_noise(observation, args.noise, rng)
    else:
        raise _ConfigError("provide --targets FILE or --pose-seed N")
    try:
        observation.check_against(skeleton)
    except ValueError as exc:
        raise _ConfigError(str(exc)) from exc
    return skeleton, observation


def _add_instance_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--skeleton", required=True, help="builtin name (mini_hand, mini_body) or JSON file")
    parser.add_argument("--targets", help="JSON file of observed joint targets")
    parser.add_argument("--pose-seed", type=int, help="synthesize targets from this seeded pose")
    parser.add_argument("--observed", choices=(harness.OBSERVE_ALL, harness.OBSERVE_ENDS),
                        default=harness.OBSERVE_ALL, help="which joints the synthesized pose reports")
    parser.add_argument("--noise", type=float, default=0.0, help="target noise radius for synthesized poses")
    parser.add_argument("--seed", type=int, default=0, help="seed for noise and restarts")


def _cmd_solve(args) -> int:
    skeleton, observation = _instance(args)
    options = SolverOptions(time_budget=args.budget_seconds)
    config = PenaltyConfig(lam=args.lam, time_budget=args.budget_seconds)
    out: dict = {"skeleton": skeleton.name, "method": args.method}
    if args.method == harness.METHOD_SDP:
        result = sdp_ik(skeleton, observation, solver_options=options, local_config=config,
                        external_command=args.solver_cmd)
        out.update(
            t=result.theta.t.tolist(),
            theta=result.theta.theta.tolist(),
            ik_cost=result.refined_cost,
            rounded_cost=result.rounded_cost,
            sdp_bound=result.sdp_bound,
            tightness_gap=result.tightness_gap,
            diagnostics=result.diagnostics,
        )
        failed = result.diagnostics["solver_status"] not in ("optimal", "near-optimal")
    else:
        method = GRADIENT_DESCENT if args.method == harness.METHOD_GD else TRUST_REGION
        config = PenaltyConfig(lam=args.lam, method=method, time_budget=args.budget_seconds)
        init = random_init(skeleton, seed=args.seed)
        result = solve_local(skeleton, observation, init, config)
        out.update(
            t=result.theta.t.tolist(),
            theta=result.theta.theta.tolist(),
            ik_cost=result.ik_cost,
            penalty_cost=result.penalty_cost,
            converged=result.converged,
            iterations=result.iterations,
            violation=result.violation,
        )
        failed = not np.isfinite(result.ik_cost)
    print(json.dumps(out, indent=2, default=float))
    return EXIT_SOLVER if failed else EXIT_OK


def _cmd_bench(args) -> int:
    skeleton = _load_any_skeleton(args.skeleton)
    if args.poses_file:
        raw = json.loads(Path(args.poses_file).read_text(encoding="utf-8"))
        from .kinematics import ParamVector

        poses = [ParamVector(t=np.array(p["t"], float), theta=np.array(p["theta"], float))
                 for p in raw["poses"]]
    elif args.skeleton in assets.BUILTIN_SKELETONS:
        poses = assets.shipped_poses(args.skeleton)
    else:
        poses = assets.generate_poses(skeleton, args.poses, args.seed + 7000)
    poses = poses[: args.poses]
    if not poses:
        raise _ConfigError("no poses to run")

    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    rows = harness.run_experiment(
        skeleton,
        poses,
        methods=methods,
        inits_per_pose=args.inits,
        noise=args.noise,
        observed=args.observed,
        seed=args.seed,
        timing=args.timing,
        lam=args.lam,
        time_budget=args.budget_seconds,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    harness.write_csv(rows, out_dir / "results.csv")
    summary = harness.summarize(rows)
    (out_dir / "summary.txt").write_text(summary, encoding="utf-8")
    (out_dir / "boxplot.svg").write_text(harness.boxplot_svg(rows), encoding="utf-8")
    print(summary, end="")
    print(f"wrote {out_dir / 'results.csv'}, summary.txt, boxplot.svg")
    return EXIT_OK


def _cmd_export_sdp(args) -> int:
    skeleton, observation = _instance(args)
    program, layout = build_sdp(skeleton, observation)
    write_sdpa(program, args.out)
    print(f"{args.out}: {program.n_vars} variables, {program.n_equalities} equalities, "
          f"{len(program.blocks)} blocks ({layout.describe()})")
    return EXIT_OK


def _cmd_validate(args) -> int:
    skeleton = _load_any_skeleton(args.skeleton)
    pose = random_init(skeleton, seed=args.seed)
    observation = harness.make_observation(skeleton, pose, harness.OBSERVE_ALL)
    program, layout = build_sdp(skeleton, observation)
    _, report = embed_ground_truth(skeleton, observation, pose, program, layout)
    census = block_census(program)
    print(f"skeleton {skeleton.name!r}: {skeleton.n_joints} joints "
          f"({sum(1 for j in skeleton.joints if not j.fixed)} revolute)")
    if skeleton.clusters is not None:
        print(f"clusters: {skeleton.clusters}")
    print(f"relaxation: {layout.describe()}")
    print(f"blocks: {census}")
    print(f"ground-truth embedding: max |Ax-b| = {report.max_equality_residual:.3e}, "
          f"min block eigenvalue = {report.min_block_eigenvalue:.3e}")
    ok = report.max_equality_residual <= 1e-9 and report.min_block_eigenvalue >= -1e-9
    print("embedding feasible" if ok else "embedding INFEASIBLE")
    return EXIT_OK if ok else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdpik", description="Inverse kinematics via semidefinite relaxation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one IK instance")
    _add_instance_arguments(p_solve)
    p_solve.add_argument("--method", choices=harness.ALL_METHODS, default=harness.METHOD_SDP)
    p_solve.add_argument("--budget-seconds", type=float, default=30.0)
    p_solve.add_argument("--lambda", dest="lam", type=float, default=100.0, help="limit penalty weight")
    p_solve.add_argument("--solver-cmd", help="external SDPA-format solver command")
    p_solve.set_defaults(func=_cmd_solve)

    p_bench = sub.add_parser("bench", help="run the benchmark harness")
    p_bench.add_argument("--skeleton", required=True)
    p_bench.add_argument("--poses", type=int, default=100, help="number of poses")
    p_bench.add_argument("--poses-file", help="JSON pose set (defaults to the shipped set for builtins)")
    p_bench.add_argument("--inits", type=int, default=20, help="local restarts per pose")
    p_bench.add_argument("--methods", default=",".join(harness.ALL_METHODS))
    p_bench.add_argument("--noise", type=float, default=0.0)
    p_bench.add_argument("--observed", choices=(harness.OBSERVE_ALL, harness.OBSERVE_ENDS),
                         default=harness.OBSERVE_ALL)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--budget-seconds", type=float, default=30.0)
    p_bench.add_argument("--lambda", dest="lam", type=float, default=100.0)
    p_bench.add_argument("--timing", action="store_true",
                         help="record wall times (output no longer machine-independent)")
    p_bench.add_argument("--out", default="bench-out", help="output directory")
    p_bench.set_defaults(func=_cmd_bench)

    p_export = sub.add_parser("export-sdp", help="write an instance in sparse SDPA format")
    _add_instance_arguments(p_export)
    p_export.add_argument("--out", required=True, help="output .dat-s file")
    p_export.set_defaults(func=_cmd_export_sdp)

    p_val = sub.add_parser("validate", help="check a skeleton file and its relaxation")
    p_val.add_argument("--skeleton", required=True)
    p_val.add_argument("--seed", type=int, default=0)
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
