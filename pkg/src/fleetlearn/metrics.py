"""Per-timestep fleet metrics: throughput, resets, idle time, and effort return.

Four quantities are tracked cumulatively at every timestep: successful task
completions, completed hard resets, idle time (robot-steps spent sitting in
a fault state, whether waiting for a reset or undergoing one), and human
effort (total assignment entries, which for a binary assignment matrix
equals its squared Frobenius norm). The headline efficiency number is the
return on human effort: fleet reward scaled by M/N and divided by
1 + human-steps measured in ``human_time_unit`` chunks, the +1 covering
runs that used no supervision at all.

Records stream to a CSV with both per-step and cumulative columns so the
cumulative values (and the effort return) can be recomputed independently
from the raw per-step events.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .allocation import AllocationMatrix
from .envs import EnvSpec, RobotState

#: Column order of the streamed metrics log.
LOG_COLUMNS = [
    "t",
    "successes",
    "resets_completed",
    "idle",
    "human_steps",
    "cum_successes",
    "cum_hard_resets",
    "cum_idle_time",
    "cum_human_steps",
    "rohe",
]


@dataclass(frozen=True)
class RoheConfig:
    human_time_unit: int = 100  # timesteps of supervision per effort unit

    def __post_init__(self):
        if self.human_time_unit < 1:
            raise ValueError("human_time_unit must be >= 1")


@dataclass(frozen=True)
class MetricsRecord:
    t: int
    cum_successes: int = 0
    cum_hard_resets: int = 0
    cum_idle_time: int = 0
    cum_human_steps: int = 0
    rohe: float = 0.0


def rohe(
    m_humans: int,
    n_robots: int,
    cum_reward: float,
    cum_human_steps: int,
    cfg: RoheConfig = RoheConfig(),
) -> float:
    """Return on human effort: (M/N) * reward / (1 + effort units)."""
    if m_humans < 1 or n_robots < 1:
        raise ValueError("need at least one robot and one human for the ratio")
    effort = cum_human_steps / cfg.human_time_unit
    return (m_humans / n_robots) * cum_reward / (1.0 + effort)


def initial_record() -> MetricsRecord:
    return MetricsRecord(t=0)


def record_step(
    prev: MetricsRecord,
    alloc: AllocationMatrix,
    violations: Sequence[bool],
    interventions,
    successes_this_step: int,
    resets_completed_this_step: int,
    cfg: RoheConfig = RoheConfig(),
    m_humans: Optional[int] = None,
    n_robots: Optional[int] = None,
) -> MetricsRecord:
    """Fold one timestep's events into the cumulative record.

    Human effort grows by the number of assignment entries; idle time grows
    by the number of robots sitting in a fault state after the step,
    attended or not.
    """
    if len(violations) != alloc.n_robots:
        raise ValueError("violation flags must cover every robot")
    m = alloc.m_humans if m_humans is None else m_humans
    n = alloc.n_robots if n_robots is None else n_robots
    cum_successes = prev.cum_successes + int(successes_this_step)
    cum_hard_resets = prev.cum_hard_resets + int(resets_completed_this_step)
    cum_idle = prev.cum_idle_time + int(sum(bool(v) for v in violations))
    cum_human = prev.cum_human_steps + alloc.n_assigned
    return MetricsRecord(
        t=prev.t + 1,
        cum_successes=cum_successes,
        cum_hard_resets=cum_hard_resets,
        cum_idle_time=cum_idle,
        cum_human_steps=cum_human,
        rohe=rohe(m, n, cum_successes, cum_human, cfg),
    )


def classify_success(
    robot: RobotState,
    spec: EnvSpec,
    supervisor_reward_ref: Optional[float] = None,
) -> bool:
    """Episode outcome at episode end.

    Goal-conditioned tasks succeed by standing on the goal cell. Horizon
    tasks succeed by reaching the horizon with no fault in the episode and
    at least 95% of the supervisor's reference episode reward.
    """
    if spec.goal_conditioned:
        return robot.goal is not None and robot.env_state == robot.goal
    if spec.horizon is None:
        raise ValueError("non-goal tasks need a horizon to classify success")
    if supervisor_reward_ref is None:
        raise ValueError("horizon success needs a supervisor reference reward")
    return (
        robot.episode_step >= spec.horizon
        and not robot.episode_violated
        and robot.episode_reward >= 0.95 * supervisor_reward_ref
    )


class MetricsWriter:
    """Streams one CSV row per timestep in ``LOG_COLUMNS`` order."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(LOG_COLUMNS)

    def write(
        self,
        record: MetricsRecord,
        successes: int,
        resets_completed: int,
        idle: int,
        human_steps: int,
    ) -> None:
        self._writer.writerow(
            [
                record.t,
                successes,
                resets_completed,
                idle,
                human_steps,
                record.cum_successes,
                record.cum_hard_resets,
                record.cum_idle_time,
                record.cum_human_steps,
                repr(record.rohe),
            ]
        )

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics_log(path) -> list[dict]:
    """Parse a streamed metrics CSV back into typed per-step rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            row = {k: int(raw[k]) for k in LOG_COLUMNS if k != "rohe"}
            row["rohe"] = float(raw["rohe"])
            rows.append(row)
    return rows


def summarize_final_rows(rows_per_seed: Sequence[dict]) -> dict:
    """Mean and standard deviation of final-row metrics across seeds."""
    out = {}
    for key in ("cum_successes", "cum_hard_resets", "cum_idle_time", "cum_human_steps", "rohe"):
        values = [row[key] for row in rows_per_seed]
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        out[f"{key}_mean"] = mean
        out[f"{key}_std"] = math.sqrt(var)
    return out
