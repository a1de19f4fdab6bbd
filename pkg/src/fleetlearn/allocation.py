"""Assignment of scarce human supervisors to robots, one matrix per timestep.

The allocator consumes per-robot priority scores and produces a binary
N x M matrix in which each robot gets at most one human and each human at
most one robot. Assignments already in flight are held for a minimum
service time (``hard_reset_steps`` for resets, ``min_teleop_steps`` for
teleoperation) before the human can move on; freed humans are then given,
lowest human index first, to the highest-priority unassisted robots.
Robots with priority exactly 0 never receive a new assignment.

With ``sticky_reassignment`` (the default) a human whose minimum service
time has elapsed stays with their robot as long as its priority remains
positive, which avoids pointless operator hand-offs; disabling it frees
the human unconditionally and re-pairs purely by the priority sort.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .envs import KIND_HARD_RESET, KIND_TELEOP, NO_INTERVENTION, InterventionRecord


@dataclass(frozen=True)
class PriorityVector:
    """Non-negative per-robot scores; 0 means "must not be newly assisted"."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)
        if scores.ndim != 1:
            raise ValueError("priority scores must be a flat vector")
        if np.isnan(scores).any():
            raise ValueError("priority scores contain NaN")
        if (scores < 0).any():
            raise ValueError("priority scores must be non-negative")

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class AllocationMatrix:
    """Binary robot-by-human assignment with row and column sums <= 1."""

    entries: np.ndarray
    n_robots: int
    m_humans: int

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int8)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        if entries.shape != (self.n_robots, self.m_humans):
            raise ValueError("allocation matrix has the wrong shape")
        if not np.isin(entries, (0, 1)).all():
            raise ValueError("allocation entries must be 0 or 1")
        if self.m_humans and (entries.sum(axis=1) > 1).any():
            raise ValueError("a robot cannot have two humans")
        if self.n_robots and (entries.sum(axis=0) > 1).any():
            raise ValueError("a human cannot help two robots")

    @classmethod
    def empty(cls, n_robots: int, m_humans: int) -> "AllocationMatrix":
        return cls(np.zeros((n_robots, m_humans), dtype=np.int8), n_robots, m_humans)

    def human_for(self, robot: int) -> Optional[int]:
        row = np.flatnonzero(self.entries[robot])
        return int(row[0]) if len(row) else None

    def robot_for(self, human: int) -> Optional[int]:
        col = np.flatnonzero(self.entries[:, human])
        return int(col[0]) if len(col) else None

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.entries))]

    @property
    def n_assigned(self) -> int:
        return int(self.entries.sum())


@dataclass(frozen=True)
class AllocatorConfig:
    min_teleop_steps: int = 5
    hard_reset_steps: int = 5
    sticky_reassignment: bool = True

    def __post_init__(self):
        if self.min_teleop_steps < 1 or self.hard_reset_steps < 1:
            raise ValueError("minimum service times must be >= 1")


def allocate(
    priorities: PriorityVector,
    prev: AllocationMatrix,
    interventions: Sequence[InterventionRecord],
    violations: Sequence[bool],
    cfg: AllocatorConfig,
) -> AllocationMatrix:
    """Produce this timestep's assignment matrix.

    In order: (1) hold every hard reset that has run fewer than
    ``hard_reset_steps`` timesteps and every teleoperation under
    ``min_teleop_steps``; (2) optionally hold finished interventions whose
    robot still has positive priority (sticky mode); (3) hand each remaining
    human, lowest index first, to the highest-priority positive-score robot
    without one, ties going to the lower robot index. Deterministic in its
    inputs.
    """
    n, m = prev.n_robots, prev.m_humans
    scores = priorities.scores
    if len(scores) != n or len(interventions) != n or len(violations) != n:
        raise ValueError("priorities, interventions and violations must cover all robots")

    entries = np.zeros((n, m), dtype=np.int8)
    held_robots: set[int] = set()
    held_humans: set[int] = set()

    # Continuation: minimum service time not yet reached.
    for i, j in prev.pairs():
        record = interventions[i]
        if record.kind is None or record.human_id != j:
            continue
        if record.kind == KIND_HARD_RESET and record.duration < cfg.hard_reset_steps:
            entries[i, j] = 1
        elif record.kind == KIND_TELEOP and record.duration < cfg.min_teleop_steps:
            entries[i, j] = 1
        if entries[i, j]:
            held_robots.add(i)
            held_humans.add(j)

    # Sticky hold: past minimum time but the robot still wants attention.
    if cfg.sticky_reassignment:
        for i, j in prev.pairs():
            if i in held_robots or j in held_humans:
                continue
            if scores[i] > 0:
                entries[i, j] = 1
                held_robots.add(i)
                held_humans.add(j)

    # Fresh assignments: free humans to the best unassisted robots.
    candidates = [i for i in range(n) if i not in held_robots and scores[i] > 0]
    candidates.sort(key=lambda i: (-scores[i], i))
    free_humans = [j for j in range(m) if j not in held_humans]
    for j, i in zip(free_humans, candidates):
        entries[i, j] = 1

    return AllocationMatrix(entries, n, m)


def intervention_kind(
    robot: int, violations: Sequence[bool], alloc: AllocationMatrix
) -> Optional[str]:
    """What an assigned human does this step: reset a fault, else teleoperate."""
    if alloc.human_for(robot) is None:
        return None
    return KIND_HARD_RESET if violations[robot] else KIND_TELEOP


def begin_interventions(
    interventions: Sequence[InterventionRecord],
    alloc: AllocationMatrix,
    kinds: Sequence[Optional[str]],
) -> tuple[InterventionRecord, ...]:
    """Decision-time view of the records for the step about to run.

    Assignments that continue an intervention of the same kind with the same
    human keep their completed-step count; anything newly assigned (or
    switching kind or human) starts at duration 0. Dropped robots get the
    empty record.
    """
    out = []
    for i, record in enumerate(interventions):
        j = alloc.human_for(i)
        if j is None:
            out.append(NO_INTERVENTION)
        elif record.kind == kinds[i] and record.human_id == j:
            out.append(record)
        else:
            out.append(InterventionRecord(kind=kinds[i], duration=0, human_id=j))
    return tuple(out)


def advance_bookkeeping(
    interventions: Sequence[InterventionRecord],
    new_alloc: AllocationMatrix,
    kinds: Sequence[Optional[str]],
    hard_reset_steps: int,
) -> tuple[InterventionRecord, ...]:
    """Roll the records forward across the step that used ``new_alloc``.

    Continued assignments gain one timestep of duration, new assignments
    appear at duration 1, dropped assignments clear, and a hard reset that
    just reached ``hard_reset_steps`` clears because the robot was redrawn
    as the reset applied.
    """
    out = []
    for i, record in enumerate(interventions):
        j = new_alloc.human_for(i)
        if j is None:
            out.append(NO_INTERVENTION)
            continue
        if record.kind == kinds[i] and record.human_id == j:
            duration = record.duration + 1
        else:
            duration = 1
        if kinds[i] == KIND_HARD_RESET and duration >= hard_reset_steps:
            out.append(NO_INTERVENTION)
        else:
            out.append(InterventionRecord(kind=kinds[i], duration=duration, human_id=j))
    return tuple(out)
