"""Benchmark harness: observation modes, noise, determinism, CSV and SVG output."""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import make_chain
from sdpik.assets import mini_hand
from sdpik.harness import (
    ALL_METHODS,
    CSV_HEADER,
    METHOD_GD,
    METHOD_SDP,
    METHOD_TR,
    OBSERVE_ALL,
    OBSERVE_ENDS,
    TrialRow,
    add_noise,
    boxplot_svg,
    make_observation,
    observed_joints,
    rows_to_csv,
    run_experiment,
    summarize,
    write_csv,
)
from sdpik.kinematics import ParamVector, forward_kinematics
from sdpik.local_ik import random_init


def _poses(skeleton, count, seed=50):
    return [random_init(skeleton, seed=seed + k) for k in range(count)]


# ===== observation modes =====


def test_observed_joints_all():
    skeleton = make_chain(["z", "y", "x"])
    assert observed_joints(skeleton, OBSERVE_ALL) == (1, 2, 3)


def test_observed_joints_ends_on_hand():
    # Leaves are the three fingertips; the root cluster contributes the wrist
    # joints 1 and 3 so the base frame stays observable.
    skeleton = mini_hand()
    assert observed_joints(skeleton, OBSERVE_ENDS) == (1, 3, 7, 12, 17)


def test_observed_joints_unknown_mode():
    skeleton = make_chain(["z"])
    with pytest.raises(ValueError, match="observation mode"):
        observed_joints(skeleton, "markers")


def test_make_observation_targets_are_fk_positions():
    skeleton = make_chain(["z", "y"])
    pose = ParamVector(t=np.array([0.1, 0.2, 0.3]), theta=np.array([0.5, -0.4]))
    obs = make_observation(skeleton, pose, OBSERVE_ALL)
    np.testing.assert_allclose(obs.targets, forward_kinematics(skeleton, pose))


# ===== noise =====


def test_add_noise_bounded_and_seeded():
    skeleton = make_chain(["z", "y", "x"])
    pose = ParamVector(t=np.zeros(3), theta=np.array([0.3, -0.2, 0.8]))
    obs = make_observation(skeleton, pose)
    r_max = 0.01
    noisy_a = add_noise(obs, r_max, np.random.default_rng(7))
    noisy_b = add_noise(obs, r_max, np.random.default_rng(7))
    np.testing.assert_array_equal(noisy_a.targets, noisy_b.targets)
    shifts = np.linalg.norm(noisy_a.targets - obs.targets, axis=1)
    assert np.all(shifts <= r_max + 1e-15)
    assert np.any(shifts > 0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        add_noise(obs, -0.1, np.random.default_rng(7))


# ===== experiment rows =====


def test_run_experiment_row_counts_and_floor():
    skeleton = make_chain(["z", "y"], limits=(-2.0, 2.0))
    poses = _poses(skeleton, 2)
    rows = run_experiment(skeleton, poses, methods=(METHOD_TR, METHOD_GD), inits_per_pose=3)
    # 2 poses x 2 local methods x 3 inits.
    assert len(rows) == 12
    for pose in (0, 1):
        pose_rows = [r for r in rows if r.pose == pose]
        assert min(r.normalized_cost for r in pose_rows) == pytest.approx(0.0, abs=1e-15)
        assert all(r.normalized_cost >= 0.0 for r in pose_rows)
        # normalized = ik_cost - best local cost of this pose.
        floor = min(r.ik_cost for r in pose_rows)
        for r in pose_rows:
            assert r.normalized_cost == pytest.approx(r.ik_cost - floor, abs=1e-15)


def test_run_experiment_sdp_runs_once_per_pose():
    skeleton = make_chain(["z"], limits=[(-1.5, 1.5)])
    poses = _poses(skeleton, 2)
    rows = run_experiment(skeleton, poses, methods=(METHOD_SDP,), inits_per_pose=5)
    assert len(rows) == 2
    assert all(r.method == METHOD_SDP and r.init == 0 for r in rows)
    # With no local rows the pose's own best is the floor.
    assert all(r.normalized_cost == pytest.approx(0.0, abs=1e-15) for r in rows)


def test_run_experiment_sdp_normalized_against_local_floor():
    skeleton = make_chain(["z", "y"], limits=(-2.0, 2.0))
    poses = _poses(skeleton, 1)
    rows = run_experiment(skeleton, poses, methods=(METHOD_TR, METHOD_SDP), inits_per_pose=4)
    local = [r for r in rows if r.method == METHOD_TR]
    sdp = [r for r in rows if r.method == METHOD_SDP]
    assert len(local) == 4 and len(sdp) == 1
    floor = min(r.ik_cost for r in local)
    assert sdp[0].normalized_cost == pytest.approx(sdp[0].ik_cost - floor, abs=1e-15)


def test_run_experiment_rejects_unknown_method():
    skeleton = make_chain(["z"])
    with pytest.raises(ValueError, match="unknown methods"):
        run_experiment(skeleton, _poses(skeleton, 1), methods=("newton",))


def test_run_experiment_deterministic_with_noise():
    skeleton = make_chain(["z", "y"], limits=(-2.0, 2.0))
    poses = _poses(skeleton, 2)
    kwargs = dict(methods=ALL_METHODS, inits_per_pose=2, noise=0.005, seed=11)
    rows_a = run_experiment(skeleton, poses, **kwargs)
    rows_b = run_experiment(skeleton, poses, **kwargs)
    assert rows_to_csv(rows_a) == rows_to_csv(rows_b)
    # A different seed moves the noise and the restarts.
    rows_c = run_experiment(skeleton, poses, methods=ALL_METHODS, inits_per_pose=2, noise=0.005, seed=12)
    assert rows_to_csv(rows_a) != rows_to_csv(rows_c)


# ===== CSV =====


def test_csv_format_without_timing(tmp_path):
    rows = [
        TrialRow(pose=0, method=METHOD_TR, init=1, ik_cost=0.5, normalized_cost=0.25, wall_time=None,
                 converged=True, violation=0.0),
        TrialRow(pose=0, method=METHOD_GD, init=0, ik_cost=1.0, normalized_cost=0.75, wall_time=None,
                 converged=False, violation=1e-12),
    ]
    text = rows_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1] == "0,local-tr,1,0.5,0.25,NA,true,0.0"
    assert lines[2] == "0,local-gd,0,1.0,0.75,NA,false,1e-12"
    out = tmp_path / "rows.csv"
    write_csv(rows, out)
    assert out.read_text(encoding="utf-8") == text


def test_csv_timing_column_filled_when_requested():
    skeleton = make_chain(["z"], limits=[(-1.0, 1.0)])
    rows = run_experiment(skeleton, _poses(skeleton, 1), methods=(METHOD_TR,), inits_per_pose=1, timing=True)
    assert all(isinstance(r.wall_time, float) and r.wall_time >= 0.0 for r in rows)
    assert "NA" not in rows_to_csv(rows).splitlines()[1]


# ===== reporting =====


def test_summarize_one_line_per_method():
    skeleton = make_chain(["z", "y"], limits=(-2.0, 2.0))
    rows = run_experiment(skeleton, _poses(skeleton, 2), methods=(METHOD_TR, METHOD_GD), inits_per_pose=2)
    table = summarize(rows)
    lines = table.splitlines()
    assert lines[0].split() == ["method", "trials", "median_cost", "p90_cost", "best_rate", "conv_rate"]
    assert len(lines) == 3
    assert lines[1].startswith("local-gd")
    assert lines[2].startswith("local-tr")
    assert "4" in lines[1].split()  # 2 poses x 2 inits


def test_boxplot_svg_well_formed():
    rng = np.random.default_rng(23)
    rows = []
    for method in (METHOD_GD, METHOD_TR):
        for k in range(40):
            value = float(rng.lognormal(mean=-3.0, sigma=1.0))
            rows.append(TrialRow(pose=k, method=method, init=0, ik_cost=value, normalized_cost=value,
                                 wall_time=None, converged=True, violation=0.0))
    # Inject a far outlier; it must be drawn as a circle.
    rows.append(TrialRow(pose=99, method=METHOD_GD, init=0, ik_cost=5.0, normalized_cost=5.0,
                         wall_time=None, converged=False, violation=0.0))
    svg = boxplot_svg(rows)
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    tags = [el.tag.split("}")[-1] for el in root.iter()]
    assert tags.count("rect") == 1 + 2  # background + one box per method
    assert tags.count("circle") >= 1
    assert svg == boxplot_svg(rows)  # deterministic text


def test_boxplot_svg_rejects_empty_input():
    with pytest.raises(ValueError, match="no rows"):
        boxplot_svg([])


def test_boxplot_svg_constant_values():
    rows = [
        TrialRow(pose=k, method=METHOD_TR, init=0, ik_cost=1.0, normalized_cost=1.0,
                 wall_time=None, converged=True, violation=0.0)
        for k in range(5)
    ]
    root = ET.fromstring(boxplot_svg(rows))
    assert root.tag.endswith("svg")
