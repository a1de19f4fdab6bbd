"""Experiment orchestration: the synchronized supervise-step-learn loop.

Each timestep runs, in a fixed order: score robot priorities, allocate
humans, collect supervisor actions for assisted robots and policy actions
for the rest, step every robot once, fold the new teleoperation pairs into
the training set, update the shared policy, and record metrics. Scripted
runs are bit-reproducible from (config, seed); a master seed fans out into
independent per-robot and per-component streams so resizing the fleet does
not disturb the streams of existing robots.

Artifacts per seed: a streamed metrics CSV, a JSONL log of every
assignment and supervisor action (enough to audit the training set and to
replay the run), the exported teleoperation dataset, and initial/final
policy snapshots. A run directory additionally holds the config snapshot
and a cross-seed summary.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .allocation import (
    AllocationMatrix,
    AllocatorConfig,
    PriorityVector,
    advance_bookkeeping,
    allocate,
    begin_interventions,
    intervention_kind,
)
from .config import RunConfig, build_env
from .envs import (
    FleetState,
    GridEnv,
    HARD_RESET_TOKEN,
    KIND_HARD_RESET,
    KIND_TELEOP,
    NO_INTERVENTION,
    SupervisorAction,
    initial_fleet,
    step_fleet,
)
from .learner import (
    CriticModel,
    Dataset,
    KIND_GOAL,
    KIND_SAFETY,
    PolicyModel,
    PolicyOnEnv,
    aggregate,
    collect_pretraining_data,
    expert_dataset,
    make_goal_critic,
    make_safety_critic,
    to_critic_transitions,
    train_critic,
    update_policy,
)
from .metrics import (
    MetricsRecord,
    MetricsWriter,
    RoheConfig,
    initial_record,
    read_metrics_log,
    record_step,
    summarize_final_rows,
)
from .priorities import (
    RunningStats,
    compose_cur,
    compose_ugc,
    compose_uc,
    constraint_priority,
    entropy_uncertainty_batch,
    ensemble_variance,
    random_priority,
)

OUTPUT_DIR_ENV_VAR = "FLEETLEARN_OUTPUT_DIR"

SWEEP_AXES = {
    "M": "m_humans",
    "t_T": "min_teleop_steps",
    "t_R": "hard_reset_steps",
    "priority": "priority",
}


@dataclass
class RunArtifacts:
    """Paths produced by one multi-seed run."""

    run_dir: str
    config_path: str
    summary_path: str
    seeds: tuple[int, ...]
    metrics_paths: dict[int, str]
    allocation_log_paths: dict[int, str]
    dataset_paths: dict[int, str]
    policy_init_paths: dict[int, str]
    policy_final_paths: dict[int, str]
    final_records: dict[int, MetricsRecord]

    def mean_final(self, key: str) -> float:
        values = [getattr(rec, key) for rec in self.final_records.values()]
        return float(sum(values)) / len(values)


class _ConcatDataset:
    """Fixed offline pairs followed by the growing online set; index-stable."""

    def __init__(self, offline: Dataset, online: Dataset):
        self.offline = offline
        self.online = online

    def __len__(self) -> int:
        return len(self.offline) + len(self.online)

    def to_arrays(self):
        if len(self.online) == 0:
            return self.offline.to_arrays()
        off, on = self.offline.to_arrays(), self.online.to_arrays()
        return tuple(np.concatenate(pair) for pair in zip(off, on))


class _PriorityEngine:
    """Builds the per-step priority vector for the configured rule."""

    def __init__(
        self,
        cfg: RunConfig,
        env: GridEnv,
        policy: PolicyOnEnv,
        safety_critic: Optional[CriticModel],
        goal_critic: Optional[CriticModel],
        rng: np.random.Generator,
    ):
        self.cfg = cfg
        self.env = env
        self.policy = policy
        self.safety_critic = safety_critic
        self.goal_critic = goal_critic
        self.rng = rng
        self.stats_u = RunningStats()
        self.stats_g = RunningStats()

    def _uncertainty(self, fleet: FleetState, dists: np.ndarray) -> np.ndarray:
        if self.cfg.uncertainty_mode == "entropy":
            return entropy_uncertainty_batch(dists)
        model = self.policy.model
        scores = np.empty(fleet.n_robots)
        for i, state in enumerate(fleet.robots):
            cell, goal = self.env.featurize(state)
            scores[i] = ensemble_variance(model.member_distributions(cell, goal))
        return scores

    def _critic_scores(self, critic: CriticModel, fleet: FleetState, dists: np.ndarray) -> np.ndarray:
        greedy = dists.argmax(axis=1)
        return np.array(
            [critic.value(state, int(greedy[i])) for i, state in enumerate(fleet.robots)]
        )

    def scores(
        self, fleet: FleetState, violations: Sequence[bool], dists: np.ndarray, t: int
    ) -> PriorityVector:
        cfg = self.cfg
        if cfg.priority == "constraint":
            return constraint_priority(violations)
        if cfg.priority == "random":
            return random_priority(self.rng, fleet.n_robots, cfg.random_threshold)
        u = self._uncertainty(fleet, dists)
        if cfg.priority == "uc":
            return compose_uc(u, violations, cfg.uncertainty_threshold, cfg.band_width)
        if cfg.priority == "ugc":
            g = 1.0 - self._critic_scores(self.goal_critic, fleet, dists)
            self.stats_u.update_many(u)
            self.stats_g.update_many(g)
            return compose_ugc(
                u,
                g,
                violations,
                self.stats_u,
                self.stats_g,
                cfg.uncertainty_weight,
                cfg.uncertainty_threshold,
                cfg.band_width,
            )
        # cur
        from .priorities import PriorityConfig

        pc = PriorityConfig(
            uncertainty_threshold=cfg.uncertainty_threshold,
            risk_threshold=cfg.risk_threshold,
            random_threshold=cfg.random_threshold,
            initial_no_reset_steps=cfg.initial_no_reset_steps,
            uncertainty_weight=cfg.uncertainty_weight,
            band_width=cfg.band_width,
        )
        r = self._critic_scores(self.safety_critic, fleet, dists)
        return compose_cur(violations, u, r, t, pc)


class ScriptedSupervisors:
    """Expert-backed stand-ins for the remote human pool."""

    def __init__(self, env: GridEnv):
        self.env = env

    def gather(self, requests: list[dict], fleet: FleetState) -> dict[int, SupervisorAction]:
        actions = {}
        for req in requests:
            robot = req["robot"]
            if req["kind"] == KIND_HARD_RESET:
                actions[robot] = SupervisorAction(HARD_RESET_TOKEN)
            else:
                actions[robot] = self.env.expert_action(fleet.robots[robot])
        return actions

    def on_step(self, record: MetricsRecord) -> None:  # gateway broadcasts here
        pass


def _component_streams(seed: int, n_robots: int):
    root = np.random.SeedSequence(seed)
    env_root, offline_ss, policy_ss, critic_ss, priority_ss, learn_ss = root.spawn(6)
    robot_rngs = [np.random.default_rng(s) for s in env_root.spawn(n_robots)]
    return robot_rngs, (
        np.random.default_rng(offline_ss),
        np.random.default_rng(policy_ss),
        np.random.default_rng(critic_ss),
        np.random.default_rng(priority_ss),
        np.random.default_rng(learn_ss),
    )


def _pretrain_critics(cfg: RunConfig, env: GridEnv, policy: PolicyOnEnv, rng):
    """Safety critic from current-policy rollouts, goal critic from expert rollouts."""
    safety = goal = None
    if cfg.priority == "cur":
        # Noisy rollouts of the cloned policy so the fault dataset actually
        # contains faults; a clean clone of the expert may never hit one.
        arity = env.spec.action_arity

        def noisy_actor(state):
            if cfg.critic_explore_eps > 0 and rng.random() < cfg.critic_explore_eps:
                return int(rng.integers(arity))
            return policy.greedy_action(state)

        raw = collect_pretraining_data(env, noisy_actor, cfg.critic_pretrain_steps, rng)
        safety = make_safety_critic(env, cfg.critic_gamma, cfg.critic_learning_rate)
        train_critic(
            safety,
            to_critic_transitions(raw, KIND_SAFETY, env.n_cells),
            cfg.critic_train_steps,
            cfg.critic_batch_size,
            cfg.critic_balance_fraction,
            rng,
        )
    if cfg.priority == "ugc":
        raw = collect_pretraining_data(env, env.expert_action, cfg.critic_pretrain_steps, rng)
        goal = make_goal_critic(env, cfg.critic_gamma, cfg.critic_learning_rate)
        train_critic(
            goal,
            to_critic_transitions(raw, KIND_GOAL, env.n_cells),
            cfg.critic_train_steps,
            cfg.critic_batch_size,
            cfg.critic_balance_fraction,
            rng,
        )
    return safety, goal


def _save_policy(path, model: PolicyModel) -> None:
    np.savez(path, **model.snapshot())


def run_single_seed(
    cfg: RunConfig,
    seed: int,
    seed_dir: Path,
    supervisors=None,
    on_step: Optional[Callable[[int, FleetState, MetricsRecord], None]] = None,
) -> MetricsRecord:
    """Execute one seeded run and write its artifacts into ``seed_dir``."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    env = build_env(cfg)
    robot_rngs, (offline_rng, policy_rng, critic_rng, priority_rng, learn_rng) = (
        _component_streams(seed, cfg.n_robots)
    )

    offline = expert_dataset(env, cfg.offline_pairs, offline_rng)
    model = PolicyModel(
        env.n_cells,
        env.spec.action_arity,
        goal_conditioned=env.spec.goal_conditioned,
        temperature=cfg.temperature,
        ensemble_size=cfg.ensemble_size,
        bootstrap_p=cfg.bootstrap_p,
    )
    online = Dataset()
    pool = _ConcatDataset(offline, online)
    if cfg.offline_pairs > 0 and cfg.offline_train_steps > 0:
        update_policy(
            model, pool, cfg.offline_train_steps, cfg.batch_size, policy_rng, cfg.learning_rate
        )
    _save_policy(seed_dir / "policy_init.npz", model)

    policy = PolicyOnEnv(model, env)
    safety_critic, goal_critic = _pretrain_critics(cfg, env, policy, critic_rng)
    engine = _PriorityEngine(cfg, env, policy, safety_critic, goal_critic, priority_rng)
    if supervisors is None:
        supervisors = ScriptedSupervisors(env)

    alloc_cfg = AllocatorConfig(
        min_teleop_steps=cfg.min_teleop_steps,
        hard_reset_steps=cfg.hard_reset_steps,
        sticky_reassignment=cfg.sticky_reassignment,
    )
    rohe_cfg = RoheConfig(human_time_unit=cfg.human_time_unit)
    fleet = initial_fleet(env, cfg.n_robots, robot_rngs)
    prev_alloc = AllocationMatrix.empty(cfg.n_robots, cfg.m_humans)
    records = (NO_INTERVENTION,) * cfg.n_robots
    metrics_rec = initial_record()

    metrics_path = seed_dir / "metrics.csv"
    alloc_path = seed_dir / "allocations.jsonl"
    with MetricsWriter(metrics_path) as writer, open(alloc_path, "w") as alloc_log:
        for t in range(cfg.total_steps):
            violations = [env.is_fault(s.env_state) for s in fleet.robots]
            dists = policy.distributions(fleet.robots)
            priorities = engine.scores(fleet, violations, dists, t)
            alloc = allocate(priorities, prev_alloc, records, violations, alloc_cfg)
            kinds = [intervention_kind(i, violations, alloc) for i in range(cfg.n_robots)]
            inflight = begin_interventions(records, alloc, kinds)

            requests = []
            for i, j in alloc.pairs():
                rec = inflight[i]
                if rec.kind == KIND_HARD_RESET:
                    requests.append(
                        {
                            "robot": i,
                            "human": j,
                            "kind": KIND_HARD_RESET,
                            "t": t,
                            "steps_remaining": cfg.hard_reset_steps - rec.duration,
                        }
                    )
                else:
                    requests.append(
                        {
                            "robot": i,
                            "human": j,
                            "kind": KIND_TELEOP,
                            "t": t,
                            "steps_remaining": max(cfg.min_teleop_steps - rec.duration, 0),
                        }
                    )
            human_actions = supervisors.gather(requests, fleet) if requests else {}

            greedy = dists.argmax(axis=1)
            actions: list = [None] * cfg.n_robots
            for i in range(cfg.n_robots):
                rec = inflight[i]
                if rec.kind == KIND_HARD_RESET:
                    actions[i] = human_actions[i] if rec.duration == 0 else None
                elif rec.kind == KIND_TELEOP:
                    actions[i] = human_actions[i]
                else:
                    actions[i] = int(greedy[i])

            staged = FleetState(fleet.robots, inflight, fleet.t)
            next_fleet, rewards, post_violations = step_fleet(
                env, staged, actions, robot_rngs, cfg.hard_reset_steps
            )

            aggregate(online, staged, alloc, human_actions, env)
            if len(online) > 0 and cfg.grad_steps_per_step > 0:
                update_policy(
                    model,
                    pool,
                    cfg.grad_steps_per_step,
                    cfg.batch_size,
                    learn_rng,
                    cfg.learning_rate,
                )

            resets_done = sum(
                1
                for rec in inflight
                if rec.kind == KIND_HARD_RESET and rec.duration + 1 >= cfg.hard_reset_steps
            )
            records = advance_bookkeeping(records, alloc, kinds, cfg.hard_reset_steps)
            successes = int(round(sum(rewards)))
            metrics_rec = record_step(
                metrics_rec,
                alloc,
                post_violations,
                records,
                successes,
                resets_done,
                rohe_cfg,
                m_humans=cfg.m_humans,
                n_robots=cfg.n_robots,
            )
            writer.write(
                metrics_rec,
                successes=successes,
                resets_completed=resets_done,
                idle=int(sum(post_violations)),
                human_steps=alloc.n_assigned,
            )
            alloc_log.write(
                json.dumps(
                    {
                        "t": t,
                        "pairs": alloc.pairs(),
                        "kinds": {str(i): kinds[i] for i, _ in alloc.pairs()},
                        "actions": {
                            str(i): (
                                a.value if isinstance(a, SupervisorAction) else a
                            )
                            for i, a in human_actions.items()
                        },
                    },
                    sort_keys=True,
                )
                + "\n"
            )

            prev_alloc = alloc
            fleet = next_fleet
            supervisors.on_step(metrics_rec)
            if on_step is not None:
                on_step(t, fleet, metrics_rec)

    online.export(seed_dir / "dataset.csv")
    _save_policy(seed_dir / "policy_final.npz", model)
    return metrics_rec


def _resolve_run_dir(cfg: RunConfig) -> Path:
    base = Path(os.environ.get(OUTPUT_DIR_ENV_VAR, cfg.output_dir))
    name = cfg.run_name or f"{cfg.env_name}-{cfg.priority}"
    run_dir = base / name
    counter = 1
    while run_dir.exists():
        run_dir = base / f"{name}-{counter}"
        counter += 1
    run_dir.mkdir(parents=True)
    return run_dir


def run_experiment(
    cfg: RunConfig,
    supervisors=None,
    on_step: Optional[Callable[[int, FleetState, MetricsRecord], None]] = None,
) -> RunArtifacts:
    """Run every configured seed and write the artifact tree.

    In gateway mode the supervisor pool is a network service and the loop
    blocks, per timestep, until every assisted robot's human has answered;
    with no connected supervisors it pauses rather than substituting actions.
    """
    run_dir = _resolve_run_dir(cfg)
    config_path = run_dir / "config.json"
    cfg.save(config_path)

    owned_gateway = None
    if supervisors is None and cfg.supervisor == "gateway":
        from .gateway import SupervisorGateway

        owned_gateway = SupervisorGateway(
            host=cfg.gateway_host,
            port=cfg.gateway_port,
            m_humans=cfg.m_humans,
            token=cfg.gateway_token,
            timeout=cfg.gateway_timeout,
        )
        owned_gateway.transcript_dir = str(run_dir)
        owned_gateway.start(build_env(cfg))
        supervisors = owned_gateway
    elif supervisors is not None and getattr(supervisors, "transcript_dir", "") is None:
        supervisors.transcript_dir = str(run_dir)

    metrics_paths, alloc_paths, dataset_paths = {}, {}, {}
    init_paths, final_paths, final_records = {}, {}, {}
    try:
        for seed in cfg.seeds:
            seed_dir = run_dir / f"seed_{seed}"
            final_records[seed] = run_single_seed(cfg, seed, seed_dir, supervisors, on_step)
            metrics_paths[seed] = str(seed_dir / "metrics.csv")
            alloc_paths[seed] = str(seed_dir / "allocations.jsonl")
            dataset_paths[seed] = str(seed_dir / "dataset.csv")
            init_paths[seed] = str(seed_dir / "policy_init.npz")
            final_paths[seed] = str(seed_dir / "policy_final.npz")
    finally:
        if owned_gateway is not None:
            owned_gateway.stop()

    summary_path = run_dir / "summary.json"
    final_rows = [
        {
            "cum_successes": rec.cum_successes,
            "cum_hard_resets": rec.cum_hard_resets,
            "cum_idle_time": rec.cum_idle_time,
            "cum_human_steps": rec.cum_human_steps,
            "rohe": rec.rohe,
        }
        for rec in final_records.values()
    ]
    with open(summary_path, "w") as fh:
        json.dump(
            {"seeds": list(cfg.seeds), "final": summarize_final_rows(final_rows)},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    return RunArtifacts(
        run_dir=str(run_dir),
        config_path=str(config_path),
        summary_path=str(summary_path),
        seeds=cfg.seeds,
        metrics_paths=metrics_paths,
        allocation_log_paths=alloc_paths,
        dataset_paths=dataset_paths,
        policy_init_paths=init_paths,
        policy_final_paths=final_paths,
        final_records=final_records,
    )


def run_sweep(base_cfg: RunConfig, axis: str, values: Sequence) -> list[RunArtifacts]:
    """One full multi-seed run per value of the swept parameter."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; pick from {sorted(SWEEP_AXES)}")
    field_name = SWEEP_AXES[axis]
    artifacts = []
    for value in values:
        name = f"{base_cfg.run_name or base_cfg.env_name}-{axis}={value}"
        cfg = replace(base_cfg, **{field_name: value, "run_name": name})
        artifacts.append(run_experiment(cfg))
    if artifacts:
        _write_sweep_summary(base_cfg, axis, values, artifacts)
    return artifacts


def _write_sweep_summary(base_cfg, axis, values, artifacts: list[RunArtifacts]) -> None:
    base = Path(os.environ.get(OUTPUT_DIR_ENV_VAR, base_cfg.output_dir))
    path = base / f"sweep-{axis}.csv"
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            [axis, "seed", "cum_successes", "cum_hard_resets", "cum_idle_time", "cum_human_steps", "rohe"]
        )
        for value, art in zip(values, artifacts):
            for seed, rec in art.final_records.items():
                writer.writerow(
                    [
                        value,
                        seed,
                        rec.cum_successes,
                        rec.cum_hard_resets,
                        rec.cum_idle_time,
                        rec.cum_human_steps,
                        repr(rec.rohe),
                    ]
                )


def baseline_matching_budget(cfg: RunConfig, reference: RunArtifacts) -> RunConfig:
    """Rescale a baseline config so its expected human usage matches a reference run.

    For the random rule the request threshold is set to
    ``1 - used / (N * T)``; for the constraint rule the offline dataset is
    enlarged by the reference's human-step count.
    """
    if not reference.final_records:
        raise ValueError("reference artifacts contain no completed runs")
    used = reference.mean_final("cum_human_steps")
    if cfg.priority == "random":
        occupancy = used / (cfg.n_robots * cfg.total_steps) if cfg.total_steps else 0.0
        threshold = min(max(1.0 - occupancy, 0.0), 1.0)
        return replace(cfg, random_threshold=threshold)
    if cfg.priority == "constraint":
        return replace(cfg, offline_pairs=cfg.offline_pairs + int(round(used)))
    raise ValueError("budget matching applies to the 'random' and 'constraint' baselines")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class LogSupervisors:
    """Replays the supervisor actions recorded in an allocations log."""

    def __init__(self, alloc_log_path):
        self.by_t: dict[int, dict] = {}
        with open(alloc_log_path) as fh:
            for line in fh:
                row = json.loads(line)
                self.by_t[row["t"]] = row["actions"]

    def gather(self, requests, fleet) -> dict[int, SupervisorAction]:
        actions = {}
        for req in requests:
            raw = self.by_t[req["t"]][str(req["robot"])]
            actions[req["robot"]] = SupervisorAction(raw if raw == HARD_RESET_TOKEN else int(raw))
        return actions

    def on_step(self, record) -> None:
        pass


def replay(run_dir, output_dir=None) -> tuple[bool, dict]:
    """Re-execute a run from its config snapshot and compare metrics digests.

    Recorded supervisor actions are fed back from the allocations log, so
    gateway-mode runs replay exactly as well as scripted ones.
    """
    run_dir = Path(run_dir)
    cfg = RunConfig.load(run_dir / "config.json")
    replay_root = Path(output_dir) if output_dir else run_dir.parent / "_replay" / run_dir.name
    report = {}
    ok = True
    for seed in cfg.seeds:
        seed_dir = replay_root / f"seed_{seed}"
        sup = LogSupervisors(run_dir / f"seed_{seed}" / "allocations.jsonl")
        run_single_seed(cfg, seed, seed_dir, supervisors=sup)
        want = file_digest(run_dir / f"seed_{seed}" / "metrics.csv")
        got = file_digest(seed_dir / "metrics.csv")
        report[seed] = {"expected": want, "actual": got, "match": want == got}
        ok = ok and want == got
    return ok, report
