import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fleetlearn import (
    RunConfig,
    baseline_matching_budget,
    file_digest,
    read_metrics_log,
    replay,
    run_experiment,
    run_sweep,
)


def tiny_cfg(tmp_path, **overrides):
    base = dict(
        n_robots=5,
        m_humans=2,
        total_steps=120,
        priority="constraint",
        offline_pairs=40,
        offline_train_steps=150,
        critic_pretrain_steps=300,
        critic_train_steps=300,
        initial_no_reset_steps=20,
        seeds=(0,),
        output_dir=str(tmp_path),
    )
    base.update(overrides)
    return RunConfig(**base)


def load_policy(path):
    with np.load(path) as data:
        return {k: data[k] for k in data.files}


def test_zero_steps_empty_log_and_untouched_policy(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, total_steps=0))
    assert read_metrics_log(art.metrics_paths[0]) == []
    init = load_policy(art.policy_init_paths[0])
    final = load_policy(art.policy_final_paths[0])
    assert init.keys() == final.keys()
    for key in init:
        assert init[key].tobytes() == final[key].tobytes()


def test_constraint_priority_never_updates_the_policy(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, total_steps=200))
    init = load_policy(art.policy_init_paths[0])
    final = load_policy(art.policy_final_paths[0])
    for key in init:
        assert init[key].tobytes() == final[key].tobytes()
    # and the run actually exercised hard resets
    assert art.final_records[0].cum_hard_resets > 0


def test_same_seed_twice_identical_digests(tmp_path):
    cfg_a = tiny_cfg(tmp_path / "a", priority="cur", total_steps=150)
    cfg_b = tiny_cfg(tmp_path / "b", priority="cur", total_steps=150)
    art_a = run_experiment(cfg_a)
    art_b = run_experiment(cfg_b)
    assert file_digest(art_a.metrics_paths[0]) == file_digest(art_b.metrics_paths[0])
    assert file_digest(art_a.allocation_log_paths[0]) == file_digest(art_b.allocation_log_paths[0])
    assert file_digest(art_a.dataset_paths[0]) == file_digest(art_b.dataset_paths[0])


def test_teleop_pairs_trace_back_to_allocation_log(tmp_path):
    from fleetlearn import Dataset

    art = run_experiment(tiny_cfg(tmp_path, priority="random", random_threshold=0.3))
    data = Dataset.load(art.dataset_paths[0])
    by_t = {}
    with open(art.allocation_log_paths[0]) as fh:
        for line in fh:
            row = json.loads(line)
            by_t[row["t"]] = row
    assert len(data) > 0
    for t, robot in data.provenance:
        row = by_t[t]
        assert any(i == robot for i, _ in row["pairs"])
        assert row["actions"][str(robot)] != "R"


def test_rohe_stream_matches_recomputation(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, priority="random", random_threshold=0.5))
    rows = read_metrics_log(art.metrics_paths[0])
    cum_r, cum_h = 0, 0
    for row in rows:
        cum_r += row["successes"]
        cum_h += row["human_steps"]
        again = (2 / 5) * cum_r / (1.0 + cum_h / 100)
        assert again == row["rohe"]


def test_budget_matching_threshold_formula(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, priority="cur", total_steps=100))
    used = art.final_records[0].cum_human_steps
    cfg = tiny_cfg(tmp_path, priority="random", total_steps=100)
    matched = baseline_matching_budget(cfg, art)
    assert matched.random_threshold == pytest.approx(1.0 - used / (5 * 100))

    constraint_cfg = tiny_cfg(tmp_path, priority="constraint", total_steps=100)
    comp = baseline_matching_budget(constraint_cfg, art)
    assert comp.offline_pairs == constraint_cfg.offline_pairs + used


def test_budget_matching_degenerate_cases(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, priority="cur", total_steps=0))
    cfg = tiny_cfg(tmp_path, priority="random", total_steps=100)
    assert baseline_matching_budget(cfg, art).random_threshold == 1.0


def test_budget_matching_rejects_other_priorities(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, total_steps=0))
    with pytest.raises(ValueError):
        baseline_matching_budget(tiny_cfg(tmp_path, priority="cur"), art)


def test_budget_matching_clamps_saturated_reference(tmp_path):
    # a reference that used every robot-step maps to threshold 0
    art = run_experiment(tiny_cfg(tmp_path, priority="cur", total_steps=20))
    art.final_records[0] = art.final_records[0].__class__(
        t=20, cum_successes=0, cum_hard_resets=0, cum_idle_time=0,
        cum_human_steps=5 * 20, rohe=0.0,
    )
    cfg = tiny_cfg(tmp_path, priority="random", total_steps=20)
    assert baseline_matching_budget(cfg, art).random_threshold == 0.0


def test_budget_matched_random_expected_usage(tmp_path):
    # with t_T=1 (no minimum-time inflation) and M=N (no capping), human
    # steps per timestep are Binomial(N, 1-threshold); the matched config
    # should land near the reference budget
    n, t = 10, 1000
    reference = 0.10 * n * t
    art = run_experiment(tiny_cfg(tmp_path, priority="cur", total_steps=20))
    art.final_records[0] = art.final_records[0].__class__(
        t=t, cum_successes=0, cum_hard_resets=0, cum_idle_time=0,
        cum_human_steps=int(reference), rohe=0.0,
    )
    cfg = tiny_cfg(
        tmp_path / "matched",
        priority="random",
        n_robots=n,
        m_humans=n,
        total_steps=t,
        min_teleop_steps=1,
        seeds=(0, 1, 2, 3, 4),
        env_params={"hazard_cells": []},  # faults would hold humans past the draw
    )
    matched = baseline_matching_budget(cfg, art)
    assert matched.random_threshold == pytest.approx(0.9)
    out = run_experiment(matched)
    mean_used = np.mean([out.final_records[s].cum_human_steps for s in out.seeds])
    assert abs(mean_used - reference) / reference < 0.05


def test_sweep_fewer_humans_strictly_more_idle(tmp_path):
    base = tiny_cfg(
        tmp_path, n_robots=10, m_humans=2, total_steps=400,
        offline_pairs=60, seeds=(0, 1, 2), run_name="msweep",
    )
    one, five = run_sweep(base, "M", [1, 5])
    for seed in base.seeds:
        assert (
            one.final_records[seed].cum_idle_time
            > five.final_records[seed].cum_idle_time
        )


def test_sweep_empty_values_no_runs(tmp_path):
    assert run_sweep(tiny_cfg(tmp_path), "t_R", []) == []


def test_sweep_writes_per_value_runs_and_summary(tmp_path):
    arts = run_sweep(tiny_cfg(tmp_path, total_steps=60), "t_R", [1, 5])
    assert len(arts) == 2
    assert (tmp_path / "sweep-t_R.csv").exists()
    cfg_a = RunConfig.load(arts[0].config_path)
    cfg_b = RunConfig.load(arts[1].config_path)
    assert cfg_a.hard_reset_steps == 1
    assert cfg_b.hard_reset_steps == 5


def test_sweep_rejects_unknown_axis(tmp_path):
    with pytest.raises(ValueError):
        run_sweep(tiny_cfg(tmp_path), "bananas", [1])


def test_replay_reproduces_digests(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, priority="cur", total_steps=100))
    ok, report = replay(art.run_dir, output_dir=tmp_path / "replayed")
    assert ok
    assert all(row["match"] for row in report.values())


def test_output_dir_env_var_override(tmp_path, monkeypatch):
    monkeypatch.setenv("FLEETLEARN_OUTPUT_DIR", str(tmp_path / "forced"))
    art = run_experiment(tiny_cfg(tmp_path / "ignored", total_steps=0))
    assert str(tmp_path / "forced") in art.run_dir


def test_multi_seed_summary(tmp_path):
    art = run_experiment(tiny_cfg(tmp_path, seeds=(0, 1), total_steps=80))
    with open(art.summary_path) as fh:
        summary = json.load(fh)
    assert summary["seeds"] == [0, 1]
    assert "cum_successes_mean" in summary["final"]
    assert set(art.final_records) == {0, 1}


def test_cli_run_and_replay_round_trip(tmp_path):
    env = dict(os.environ)
    out = subprocess.run(
        [
            sys.executable,
            "-m",
            "fleetlearn.cli",
            "run",
            "--n-robots", "4",
            "--m-humans", "1",
            "--total-steps", "60",
            "--priority", "constraint",
            "--offline-pairs", "30",
            "--offline-train-steps", "100",
            "--seeds", "0",
            "--output-dir", str(tmp_path),
            "--run-name", "cli-smoke",
        ],
        capture_output=True,
        text=True,
        env=env,
    )
    assert out.returncode == 0, out.stderr
    assert "artifacts in" in out.stdout
    replay_out = subprocess.run(
        [
            sys.executable,
            "-m",
            "fleetlearn.cli",
            "replay",
            str(tmp_path / "cli-smoke"),
            "--output-dir", str(tmp_path / "replayed"),
        ],
        capture_output=True,
        text=True,
        env=env,
    )
    assert replay_out.returncode == 0, replay_out.stderr
    assert "match" in replay_out.stdout


def test_cli_config_file_with_flag_override(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    tiny_cfg(tmp_path, total_steps=40).save(cfg_path)
    out = subprocess.run(
        [
            sys.executable,
            "-m",
            "fleetlearn.cli",
            "run",
            "--config", str(cfg_path),
            "--total-steps", "10",
            "--run-name", "override",
        ],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    saved = RunConfig.load(tmp_path / "override" / "config.json")
    assert saved.total_steps == 10  # flag beat the config file
