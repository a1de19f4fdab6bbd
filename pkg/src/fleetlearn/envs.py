"""Grid-based robot fleet environments with fault states and timed resets.

A fleet is N copies of one small discrete MDP, all stepped in lockstep on a
shared clock. At any timestep a robot is either making task progress, stuck
in a fault cell (a state it cannot leave on its own), or being reset by a
supervisor. Two environment families are provided:

* ``make_gridworld`` -- free navigation on a rectangular grid. Moving off
  the grid is a wall no-op; moving onto a hazard cell is a fault.
* ``make_blockpush`` -- a cube pushed around a square workspace. The outer
  boundary band (and optional corner regions) are fault cells.

Both are goal-conditioned: an episode succeeds when the robot's cell equals
its goal cell, which pays sparse reward 1 and triggers an autonomous soft
reset (a fresh draw from the initial distribution) on the following step.
A fault can only be cleared by a hard reset, which freezes the robot in
place for ``hard_reset_steps`` timesteps and then redraws its state.

Actions are discrete: 0=up, 1=down, 2=left, 3=right, with y growing
downward. The scripted expert follows a breadth-first shortest path to the
goal that avoids fault cells, breaking ties in that fixed action order, and
requests a hard reset whenever the robot sits in a fault cell.

Everything here is pure and deterministic given the supplied generators;
there is no hidden state and no I/O.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

# Action indices and their (dx, dy) displacements; y grows downward.
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("up", "down", "left", "right")
ACTION_DELTAS = ((0, -1), (0, 1), (-1, 0), (1, 0))

#: Distinguished supervisor action: begin (or continue) a hard reset.
HARD_RESET_TOKEN = "R"

#: Intervention kinds recorded in fleet bookkeeping.
KIND_TELEOP = "teleop"
KIND_HARD_RESET = "hard_reset"

Cell = tuple[int, int]


@dataclass(frozen=True)
class EnvSpec:
    """Static description of one robot's MDP."""

    state_descriptor: tuple
    action_arity: int
    horizon: Optional[int] = None
    goal_conditioned: bool = True

    def __post_init__(self):
        if self.action_arity < 1:
            raise ValueError("action_arity must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1 when present")


@dataclass(frozen=True)
class RobotState:
    """One robot's state plus per-episode bookkeeping.

    ``episode_reward`` and ``episode_violated`` accumulate within the current
    episode and reset with it; they exist so episode outcomes can be
    classified without replaying the trajectory.
    """

    env_state: Cell
    episode_step: int = 0
    goal: Optional[Cell] = None
    episode_reward: float = 0.0
    episode_violated: bool = False


@dataclass(frozen=True)
class InterventionRecord:
    """Type and progress of the intervention a robot is receiving, if any.

    ``duration`` counts timesteps of the intervention already completed; the
    record for a robot not being helped is ``NO_INTERVENTION``.
    """

    kind: Optional[str] = None
    duration: int = 0
    human_id: Optional[int] = None

    def __post_init__(self):
        if self.kind is None and (self.duration != 0 or self.human_id is not None):
            raise ValueError("empty record must have duration 0 and no human")
        if self.kind is not None and self.human_id is None:
            raise ValueError("active intervention needs a human id")


NO_INTERVENTION = InterventionRecord()


@dataclass(frozen=True)
class FleetState:
    """Synchronized snapshot of every robot plus intervention bookkeeping."""

    robots: tuple[RobotState, ...]
    interventions: tuple[InterventionRecord, ...]
    t: int = 0

    def __post_init__(self):
        if len(self.robots) != len(self.interventions):
            raise ValueError("one intervention record per robot required")
        humans = [r.human_id for r in self.interventions if r.human_id is not None]
        if len(humans) != len(set(humans)):
            raise ValueError("a human cannot be assigned to two robots")

    @property
    def n_robots(self) -> int:
        return len(self.robots)


@dataclass(frozen=True)
class SupervisorAction:
    """Either an environment action index or the hard-reset token."""

    value: int | str

    @property
    def is_hard_reset(self) -> bool:
        return self.value == HARD_RESET_TOKEN


class GridEnv:
    """A rectangular cell grid with fault cells, built by the ``make_*`` helpers.

    Bundles the static ``EnvSpec`` with the transition rule, the fault set,
    initial-state and goal samplers, a cached shortest-path expert, and the
    featurization used by learners. ``wall_noop`` selects gridworld movement
    (off-grid moves keep the robot in place); block pushing instead relies on
    its boundary band, so a fault is reached before the grid edge.
    """

    def __init__(
        self,
        name: str,
        width: int,
        height: int,
        fault_cells: Iterable[Cell],
        start_dist=None,
        goal_dist=None,
        horizon: Optional[int] = None,
        wall_noop: bool = True,
        fallback_action: int = UP,
        allow_unforced_hard_reset: bool = False,
        sample_retries: int = 100,
    ):
        self.name = name
        self.width = int(width)
        self.height = int(height)
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        self.fault_cells = frozenset((int(x), int(y)) for x, y in fault_cells)
        for cell in self.fault_cells:
            if not self.in_bounds(cell):
                raise ValueError(f"fault cell {cell} outside the grid")
        self.free_cells = tuple(
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.fault_cells
        )
        if not self.free_cells:
            raise ValueError("environment has no free cells")
        self.wall_noop = wall_noop
        self.fallback_action = fallback_action
        self.allow_unforced_hard_reset = allow_unforced_hard_reset
        self.sample_retries = sample_retries
        self._start_sampler = self._make_sampler(start_dist, "start")
        self._goal_sampler = self._make_sampler(goal_dist, "goal")
        self.unreachable_episodes = 0  # incremented when the expert has no path
        self._dist_cache: dict[Cell, np.ndarray] = {}
        self.spec = EnvSpec(
            state_descriptor=("cell_grid", self.width, self.height),
            action_arity=4,
            horizon=horizon,
            goal_conditioned=True,
        )

    # -- geometry ---------------------------------------------------------

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_fault(self, cell: Cell) -> bool:
        return cell in self.fault_cells

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_index(self, cell: Cell) -> int:
        x, y = cell
        return y * self.width + x

    def transition(self, cell: Cell, action: int) -> Cell:
        """Deterministic single-robot move; faults are absorbing elsewhere."""
        dx, dy = ACTION_DELTAS[action]
        target = (cell[0] + dx, cell[1] + dy)
        if not self.in_bounds(target):
            if self.wall_noop:
                return cell
            raise RuntimeError(
                f"move off the workspace from {cell}; boundary band should prevent this"
            )
        return target

    # -- sampling ---------------------------------------------------------

    def _make_sampler(self, dist, role: str):
        """Normalize a distribution spec to a callable(rng, robot) -> cell.

        Accepts None (uniform over free cells), an iterable of cells
        (uniform over them), a callable(rng), or a callable(rng, robot) for
        per-robot initial distributions (robot is None outside fleet use).
        """
        if dist is None:
            cells = self.free_cells
            return lambda rng, robot: cells[rng.integers(len(cells))]
        if callable(dist):
            try:
                two_arg = len(inspect.signature(dist).parameters) >= 2
            except (TypeError, ValueError):
                two_arg = False
            if two_arg:
                return dist
            return lambda rng, robot: dist(rng)
        cells = tuple((int(x), int(y)) for x, y in dist)
        if not cells:
            raise ValueError(f"{role} distribution is empty")
        if role == "start":
            bad = [c for c in cells if self.is_fault(c)]
            if bad:
                raise ValueError(f"start cells {bad} overlap fault cells")
        return lambda rng, robot: cells[rng.integers(len(cells))]

    def _sample_valid(self, sampler, rng, robot, avoid: Optional[Cell], role: str) -> Cell:
        for _ in range(self.sample_retries):
            cell = tuple(sampler(rng, robot))
            if self.is_fault(cell) or not self.in_bounds(cell):
                continue
            if avoid is not None and cell == avoid:
                continue
            return cell
        raise RuntimeError(f"could not draw a usable {role} cell in {self.sample_retries} tries")

    def sample_initial(self, rng: np.random.Generator, robot: Optional[int] = None) -> RobotState:
        """Draw a fresh episode: start cell, and a distinct goal cell.

        ``robot`` is forwarded to two-argument samplers so fleets can give
        each robot its own initial distribution; the default samplers are
        shared and ignore it.
        """
        start = self._sample_valid(self._start_sampler, rng, robot, None, "start")
        goal = self._sample_valid(self._goal_sampler, rng, robot, start, "goal")
        return RobotState(env_state=start, episode_step=0, goal=goal)

    # -- expert -----------------------------------------------------------

    def distance_field(self, goal: Cell) -> np.ndarray:
        """BFS distance (in moves) from every free cell to ``goal``; -1 if cut off."""
        cached = self._dist_cache.get(goal)
        if cached is not None:
            return cached
        dist = np.full((self.height, self.width), -1, dtype=np.int32)
        gx, gy = goal
        dist[gy, gx] = 0
        frontier = [goal]
        while frontier:
            nxt = []
            for x, y in frontier:
                d = dist[y, x] + 1
                for dx, dy in ACTION_DELTAS:
                    nb = (x + dx, y + dy)
                    if not self.in_bounds(nb) or self.is_fault(nb):
                        continue
                    if dist[nb[1], nb[0]] == -1:
                        dist[nb[1], nb[0]] = d
                        nxt.append(nb)
            frontier = nxt
        self._dist_cache[goal] = dist
        return dist

    def expert_action(self, state: RobotState) -> SupervisorAction:
        """Hard reset in a fault cell, else the first step of a shortest path.

        Ties between equally short paths go to the lowest action index
        (up < down < left < right). With no path to the goal the configured
        fallback action is returned and the episode is flagged unreachable.
        """
        cell = state.env_state
        if self.is_fault(cell):
            return SupervisorAction(HARD_RESET_TOKEN)
        dist = self.distance_field(state.goal)
        here = dist[cell[1], cell[0]]
        if here == 0:  # already on the goal; the pending soft reset ignores this
            return SupervisorAction(self.fallback_action)
        if here < 0:
            self.unreachable_episodes += 1
            return SupervisorAction(self.fallback_action)
        for action in (UP, DOWN, LEFT, RIGHT):
            nb = self.transition(cell, action)
            if nb == cell or self.is_fault(nb):
                continue
            if dist[nb[1], nb[0]] == here - 1:
                return SupervisorAction(action)
        raise RuntimeError("reachable cell with no descending neighbor")  # pragma: no cover

    # -- featurization ----------------------------------------------------

    def featurize(self, state: RobotState) -> tuple[int, int]:
        """(cell index, goal index) pair used by linear policies and critics."""
        goal_idx = self.cell_index(state.goal) if state.goal is not None else 0
        return self.cell_index(state.env_state), goal_idx


def make_gridworld(
    width: int,
    height: int,
    hazard_cells: Iterable[Cell] = (),
    start_dist=None,
    goal_dist=None,
    horizon: Optional[int] = None,
    allow_unforced_hard_reset: bool = False,
) -> GridEnv:
    """Navigation grid: off-grid moves are wall no-ops, hazard cells are faults."""
    return GridEnv(
        name="gridworld",
        width=width,
        height=height,
        fault_cells=hazard_cells,
        start_dist=start_dist,
        goal_dist=goal_dist,
        horizon=horizon,
        wall_noop=True,
        allow_unforced_hard_reset=allow_unforced_hard_reset,
    )


def blockpush_fault_cells(
    grid_k: int, boundary_margin: int, corner_exclusions: Iterable[tuple[str, int]]
) -> frozenset[Cell]:
    """Boundary band of the given margin plus square corner cutouts."""
    cells = set()
    for y in range(grid_k):
        for x in range(grid_k):
            if (
                x < boundary_margin
                or y < boundary_margin
                or x >= grid_k - boundary_margin
                or y >= grid_k - boundary_margin
            ):
                cells.add((x, y))
    for corner, size in corner_exclusions:
        xs = range(size) if corner in ("nw", "sw") else range(grid_k - size, grid_k)
        ys = range(size) if corner in ("nw", "ne") else range(grid_k - size, grid_k)
        cells.update((x, y) for x in xs for y in ys)
    return frozenset(cells)


def make_blockpush(
    grid_k: int,
    boundary_margin: int = 1,
    corner_exclusions: Iterable[tuple[str, int]] = (),
    goal_dist=None,
    start_dist=None,
    horizon: Optional[int] = None,
) -> GridEnv:
    """Cube on a K x K workspace; pushing it into the boundary band is a fault."""
    if grid_k < 4:
        raise ValueError("block pushing needs a grid of at least 4x4")
    if boundary_margin < 1:
        raise ValueError("boundary band must be at least one cell wide")
    faults = blockpush_fault_cells(grid_k, boundary_margin, corner_exclusions)
    return GridEnv(
        name="blockpush",
        width=grid_k,
        height=grid_k,
        fault_cells=faults,
        start_dist=start_dist,
        goal_dist=goal_dist,
        horizon=horizon,
        wall_noop=False,
    )


# -- fleet dynamics ---------------------------------------------------------


def constraint(state: RobotState, env: GridEnv) -> bool:
    """True iff the robot is in a fault cell and needs a hard reset."""
    if not env.in_bounds(state.env_state):
        raise ValueError(f"state {state.env_state} outside the grid")
    return env.is_fault(state.env_state)


def expert_policy(state: RobotState, env: GridEnv, rng=None) -> SupervisorAction:
    """Scripted supervisor: reset fault states, otherwise walk to the goal."""
    return env.expert_action(state)


def initial_fleet(env: GridEnv, n_robots: int, rngs: Sequence[np.random.Generator]) -> FleetState:
    robots = tuple(env.sample_initial(rngs[i], robot=i) for i in range(n_robots))
    return FleetState(robots=robots, interventions=(NO_INTERVENTION,) * n_robots, t=0)


def _soft_reset_pending(env: GridEnv, state: RobotState) -> bool:
    if env.spec.goal_conditioned and state.goal is not None and state.env_state == state.goal:
        return True
    if env.spec.horizon is not None and state.episode_step >= env.spec.horizon:
        return True
    return False


def _is_reset_action(action) -> bool:
    if isinstance(action, SupervisorAction):
        return action.is_hard_reset
    return action == HARD_RESET_TOKEN


def _action_index(action, arity: int) -> int:
    value = action.value if isinstance(action, SupervisorAction) else action
    idx = int(value)
    if not 0 <= idx < arity:
        raise ValueError(f"action index {idx} out of range for {arity} actions")
    return idx


def step_fleet(
    env: GridEnv,
    fleet: FleetState,
    actions: Sequence,
    rngs: Sequence[np.random.Generator],
    hard_reset_steps: int,
) -> tuple[FleetState, list[float], list[bool]]:
    """Advance every robot by exactly one synchronized timestep.

    ``actions`` holds one entry per robot: an action index, a
    ``SupervisorAction``, or ``None`` for robots whose hard reset is already
    in progress. Per robot the outcome is, in order of precedence:

    1. Hard reset in progress (per the intervention record): the state stays
       bit-identical until the reset's final timestep, which redraws the
       state from the initial distribution. Reward 0 throughout.
    2. Hard-reset action received: starts a reset at this timestep (the
       record is installed by the caller's bookkeeping); same freeze rule.
    3. Fault cell without a reset: the robot idles in place with reward 0.
    4. Completed episode (goal or horizon reached on a previous step): the
       supplied action is ignored and the state soft-resets.
    5. Otherwise the grid transition applies; landing on the goal pays
       reward 1.

    Returns the next fleet state (intervention records unchanged; the caller
    owns that bookkeeping), per-robot rewards, and per-robot post-step fault
    flags.
    """
    n = fleet.n_robots
    if len(actions) != n:
        raise ValueError(f"expected {n} actions, got {len(actions)}")
    new_robots: list[RobotState] = []
    rewards: list[float] = []
    violations: list[bool] = []
    for i in range(n):
        state = fleet.robots[i]
        record = fleet.interventions[i]
        action = actions[i]
        if record.kind == KIND_HARD_RESET:
            if action is not None and not _is_reset_action(action):
                raise ValueError(f"robot {i} is mid hard reset; expected no-op or reset token")
            if record.duration + 1 >= hard_reset_steps:
                new_state = env.sample_initial(rngs[i], robot=i)
            else:
                new_state = state
            reward = 0.0
        elif action is not None and _is_reset_action(action):
            if not env.is_fault(state.env_state) and not env.allow_unforced_hard_reset:
                raise ValueError(f"hard reset of non-fault robot {i} is not allowed here")
            new_state = env.sample_initial(rngs[i], robot=i) if hard_reset_steps <= 1 else state
            reward = 0.0
        elif env.is_fault(state.env_state):
            new_state = state  # unattended fault: frozen and unrewarded
            reward = 0.0
        elif _soft_reset_pending(env, state):
            new_state = env.sample_initial(rngs[i], robot=i)
            reward = 0.0
        else:
            if action is None:
                raise ValueError(f"robot {i} is not mid hard reset; an action is required")
            idx = _action_index(action, env.spec.action_arity)
            cell = env.transition(state.env_state, idx)
            reached = cell == state.goal and not env.is_fault(cell)
            reward = 1.0 if reached else 0.0
            new_state = replace(
                state,
                env_state=cell,
                episode_step=state.episode_step + 1,
                episode_reward=state.episode_reward + reward,
                episode_violated=state.episode_violated or env.is_fault(cell),
            )
        new_robots.append(new_state)
        rewards.append(reward)
        violations.append(env.is_fault(new_state.env_state))
    next_fleet = FleetState(tuple(new_robots), fleet.interventions, fleet.t + 1)
    return next_fleet, rewards, violations
