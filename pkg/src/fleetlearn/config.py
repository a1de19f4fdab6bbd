"""Run configuration: one flat, serializable record describing an experiment.

A config round-trips through JSON so a snapshot written next to a run's
artifacts is enough to reproduce the run bit-for-bit with the same build.
Every field is also exposed as a command-line flag by the CLI.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .envs import GridEnv, make_blockpush, make_gridworld

PRIORITY_NAMES = ("constraint", "random", "uc", "ugc", "cur")
ENV_NAMES = ("gridworld", "blockpush")
SUPERVISOR_MODES = ("scripted", "gateway")

def border_cells(width: int, height: int) -> list[list[int]]:
    """The outermost ring of a width x height grid."""
    return [
        [x, y]
        for y in range(height)
        for x in range(width)
        if x in (0, width - 1) or y in (0, height - 1)
    ]


#: Desk-scale gridworld: an 8x8 board ringed by hazards plus two interior ones,
#: so a poorly trained policy actually faults instead of parking against a wall.
DEFAULT_GRIDWORLD = {
    "width": 8,
    "height": 8,
    "hazard_cells": border_cells(8, 8) + [[3, 3], [4, 4]],
    "horizon": 100,
}

DEFAULT_BLOCKPUSH = {
    "grid_k": 8,
    "boundary_margin": 1,
    "corner_exclusions": [],
    "horizon": 100,
}


@dataclass
class RunConfig:
    """Everything a run needs; defaults give the desk-scale gridworld setup."""

    env_name: str = "gridworld"
    env_params: dict = field(default_factory=dict)
    n_robots: int = 20
    m_humans: int = 2
    total_steps: int = 2000
    min_teleop_steps: int = 5
    hard_reset_steps: int = 5
    sticky_reassignment: bool = True
    priority: str = "cur"
    # priority rule knobs
    uncertainty_threshold: float = 0.05
    risk_threshold: float = 0.5
    random_threshold: float = 0.5
    initial_no_reset_steps: int = 200
    uncertainty_weight: float = 0.5
    band_width: float = 1000.0
    uncertainty_mode: str = "entropy"  # or "ensemble"
    # policy learning knobs
    batch_size: int = 256
    grad_steps_per_step: int = 1
    learning_rate: float = 0.5
    temperature: float = 1.0
    offline_pairs: int = 5000
    offline_train_steps: int = 2000
    ensemble_size: int = 0
    bootstrap_p: float = 0.5
    # critic knobs
    critic_gamma: float = 0.9
    critic_learning_rate: float = 0.5
    critic_pretrain_steps: int = 4000
    critic_train_steps: int = 3000
    critic_batch_size: int = 64
    critic_balance_fraction: float = 0.25
    critic_explore_eps: float = 0.2  # random-action rate while collecting fault data
    # metrics
    human_time_unit: int = 100
    # reproducibility and output
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    run_name: Optional[str] = None
    # supervision transport
    supervisor: str = "scripted"
    gateway_host: str = "127.0.0.1"
    gateway_port: int = 8711
    gateway_token: str = "fleet"
    gateway_timeout: Optional[float] = None

    def __post_init__(self):
        if self.env_name not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.env_name!r}; pick from {ENV_NAMES}")
        if self.priority not in PRIORITY_NAMES:
            raise ValueError(f"unknown priority {self.priority!r}; pick from {PRIORITY_NAMES}")
        if self.supervisor not in SUPERVISOR_MODES:
            raise ValueError(f"unknown supervisor mode {self.supervisor!r}")
        if self.n_robots < 1:
            raise ValueError("need at least one robot")
        if not 0 <= self.m_humans <= self.n_robots:
            raise ValueError("need 0 <= humans <= robots")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.uncertainty_mode not in ("entropy", "ensemble"):
            raise ValueError("uncertainty_mode must be 'entropy' or 'ensemble'")
        if self.uncertainty_mode == "ensemble" and self.ensemble_size < 2:
            raise ValueError("ensemble uncertainty needs ensemble_size >= 2")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def resolved_env_params(self) -> dict:
        base = dict(DEFAULT_GRIDWORLD if self.env_name == "gridworld" else DEFAULT_BLOCKPUSH)
        base.update(self.env_params)
        return base

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_env(cfg: RunConfig) -> GridEnv:
    params = cfg.resolved_env_params()
    if cfg.env_name == "gridworld":
        return make_gridworld(
            width=params["width"],
            height=params["height"],
            hazard_cells=[tuple(c) for c in params.get("hazard_cells", [])],
            start_dist=params.get("start_cells"),
            goal_dist=params.get("goal_cells"),
            horizon=params.get("horizon"),
        )
    return make_blockpush(
        grid_k=params["grid_k"],
        boundary_margin=params.get("boundary_margin", 1),
        corner_exclusions=[tuple(c) for c in params.get("corner_exclusions", [])],
        goal_dist=params.get("goal_cells"),
        start_dist=params.get("start_cells"),
        horizon=params.get("horizon"),
    )
