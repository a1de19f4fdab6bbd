"""Shared fleet policy, its training data, and the tabular critics.

The fleet's control policy is a linear-softmax classifier over a one-hot
featurization of (robot cell, goal cell). That keeps learning fast and
exactly analyzable at desk scale while still producing real uncertainty
signals: per-state entropy, and across-member variance when a bootstrap
ensemble is enabled.

Training data is an append-only set of (featurized state, supervisor
action) pairs harvested each timestep from teleoperating humans only;
hard-reset actions are never stored. Every pair carries provenance
(timestep, robot id) so the harvesting rule can be audited after a run.

Critics are tabular Q-functions trained on {0,1} sparse events: the safety
critic predicts discounted fault probability from transitions labeled with
fault entries, the goal critic predicts discounted success probability from
expert rollouts. Both pretrain offline from rollouts of a supplied actor,
with minibatches rebalanced so a fixed fraction comes from the rare
positive class.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .allocation import AllocationMatrix
from .envs import (
    GridEnv,
    FleetState,
    RobotState,
    SupervisorAction,
    _is_reset_action,
)

KIND_SAFETY = "safety"
KIND_GOAL = "goal"


# -- dataset ----------------------------------------------------------------


class Dataset:
    """Append-only store of featurized (state, action) pairs with provenance.

    Backed by doubling numpy buffers so per-timestep training can grab array
    views without re-converting the whole history.
    """

    _FIELDS = ("cells", "goals", "actions", "times", "robots")

    def __init__(self, capacity: int = 256):
        self._buf = {name: np.empty(capacity, dtype=np.int64) for name in self._FIELDS}
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def _grow(self) -> None:
        for name, arr in self._buf.items():
            bigger = np.empty(len(arr) * 2, dtype=np.int64)
            bigger[: self._n] = arr[: self._n]
            self._buf[name] = bigger

    def append(self, cell: int, goal: int, action: int, t: int, robot_id: int) -> None:
        if self._n == len(self._buf["cells"]):
            self._grow()
        for name, value in zip(self._FIELDS, (cell, goal, action, t, robot_id)):
            self._buf[name][self._n] = int(value)
        self._n += 1

    @property
    def cells(self) -> np.ndarray:
        return self._buf["cells"][: self._n]

    @property
    def goals(self) -> np.ndarray:
        return self._buf["goals"][: self._n]

    @property
    def actions(self) -> np.ndarray:
        return self._buf["actions"][: self._n]

    @property
    def provenance(self) -> list[tuple[int, int]]:
        """(timestep, robot id) per pair, in append order."""
        return list(zip(self._buf["times"][: self._n].tolist(), self._buf["robots"][: self._n].tolist()))

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.cells, self.goals, self.actions

    def export(self, path) -> None:
        """Line-delimited record file; columns: timestep, robot_id, cell, goal, action."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestep", "robot_id", "cell", "goal", "action"])
            for (t, robot), cell, goal, action in zip(
                self.provenance, self.cells.tolist(), self.goals.tolist(), self.actions.tolist()
            ):
                writer.writerow([t, robot, cell, goal, action])

    @classmethod
    def load(cls, path) -> "Dataset":
        dataset = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["timestep", "robot_id", "cell", "goal", "action"]:
                raise ValueError(f"unrecognized dataset header: {header}")
            for t, robot, cell, goal, action in reader:
                dataset.append(int(cell), int(goal), int(action), int(t), int(robot))
        return dataset


def aggregate(
    dataset: Dataset,
    fleet: FleetState,
    alloc: AllocationMatrix,
    human_actions: dict[int, SupervisorAction],
    env: GridEnv,
) -> Dataset:
    """Append this step's teleoperation pairs; hard resets contribute nothing.

    ``human_actions`` maps robot index to the supervisor's action and may
    only contain robots that actually hold an assignment in ``alloc``.
    """
    for robot in human_actions:
        if alloc.human_for(robot) is None:
            raise ValueError(f"robot {robot} has no human this step; action rejected")
    for robot in sorted(human_actions):
        action = human_actions[robot]
        if _is_reset_action(action):
            continue
        value = action.value if isinstance(action, SupervisorAction) else action
        cell, goal = env.featurize(fleet.robots[robot])
        dataset.append(cell, goal, int(value), fleet.t, robot)
    return dataset


# -- policy -------------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class PolicyModel:
    """Linear-softmax action scorer over one-hot (cell, goal) features.

    With ``ensemble_size`` > 0 the model is a bag of bootstrap members:
    each training pair joins each member's index set independently with
    probability ``bootstrap_p``, members train only on their own set, and
    the served action distribution is the mean of member softmaxes.
    """

    def __init__(
        self,
        n_cells: int,
        n_actions: int,
        goal_conditioned: bool = True,
        temperature: float = 1.0,
        ensemble_size: int = 0,
        bootstrap_p: float = 0.5,
    ):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.n_cells = int(n_cells)
        self.n_actions = int(n_actions)
        self.goal_conditioned = bool(goal_conditioned)
        self.temperature = float(temperature)
        self.bootstrap_p = float(bootstrap_p)
        n_features = 2 * self.n_cells if self.goal_conditioned else self.n_cells
        self.weights = np.zeros((n_features, self.n_actions))
        self.members = [np.zeros_like(self.weights) for _ in range(ensemble_size)]
        self.member_indices: list[list[int]] = [[] for _ in range(ensemble_size)]
        self.pairs_registered = 0

    @property
    def is_ensemble(self) -> bool:
        return bool(self.members)

    def register_pairs(self, dataset_size: int, rng: np.random.Generator) -> None:
        """Assign not-yet-seen dataset indices to member bootstrap sets."""
        if dataset_size <= self.pairs_registered:
            return
        new = np.arange(self.pairs_registered, dataset_size)
        for member_set in self.member_indices:
            keep = rng.random(len(new)) < self.bootstrap_p
            member_set.extend(int(i) for i in new[keep])
        self.pairs_registered = dataset_size

    def _logits(self, cells, goals, weights: Optional[np.ndarray] = None) -> np.ndarray:
        w = self.weights if weights is None else weights
        logits = w[cells]
        if self.goal_conditioned:
            logits = logits + w[self.n_cells + np.asarray(goals)]
        return logits / self.temperature

    def distribution_batch(self, cells, goals) -> np.ndarray:
        if not self.is_ensemble:
            return _softmax(self._logits(cells, goals))
        dists = [_softmax(self._logits(cells, goals, w)) for w in self.members]
        return np.mean(dists, axis=0)

    def member_distributions(self, cell: int, goal: int) -> np.ndarray:
        """One distribution per ensemble member for a single state."""
        if not self.is_ensemble:
            raise ValueError("model has no ensemble members")
        return np.stack(
            [_softmax(self._logits([cell], [goal], w))[0] for w in self.members]
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        arrays = {"weights": self.weights.copy()}
        for b, w in enumerate(self.members):
            arrays[f"member_{b}"] = w.copy()
        return arrays


def act(model: PolicyModel, cell: int, goal: int) -> tuple[int, np.ndarray]:
    """Greedy action (ties to the lowest index) plus the served distribution."""
    dist = model.distribution_batch([cell], [goal])[0]
    return int(np.argmax(dist)), dist


def act_batch(model: PolicyModel, cells, goals) -> tuple[np.ndarray, np.ndarray]:
    dists = model.distribution_batch(cells, goals)
    return dists.argmax(axis=1), dists


class PolicyOnEnv:
    """Binds a policy to an environment's featurization for state-level calls."""

    def __init__(self, model: PolicyModel, env: GridEnv):
        self.model = model
        self.env = env

    def act(self, state: RobotState) -> tuple[int, np.ndarray]:
        cell, goal = self.env.featurize(state)
        return act(self.model, cell, goal)

    def greedy_action(self, state: RobotState) -> int:
        return self.act(state)[0]

    def distributions(self, states: Sequence[RobotState]) -> np.ndarray:
        feats = [self.env.featurize(s) for s in states]
        cells = [c for c, _ in feats]
        goals = [g for _, g in feats]
        return self.model.distribution_batch(cells, goals)


def policy_nll(
    weights: np.ndarray,
    cells,
    goals,
    labels,
    n_cells: int,
    goal_conditioned: bool = True,
    temperature: float = 1.0,
) -> float:
    """Mean cross-entropy of the linear-softmax policy on a batch."""
    logits = weights[cells]
    if goal_conditioned:
        logits = logits + weights[n_cells + np.asarray(goals)]
    logits = logits / temperature
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float((log_z - picked).mean())


def policy_nll_grad(
    weights: np.ndarray,
    cells,
    goals,
    labels,
    n_cells: int,
    goal_conditioned: bool = True,
    temperature: float = 1.0,
) -> np.ndarray:
    """Analytic gradient of ``policy_nll`` with respect to the weights."""
    cells = np.asarray(cells)
    goals = np.asarray(goals)
    labels = np.asarray(labels)
    logits = weights[cells]
    if goal_conditioned:
        logits = logits + weights[n_cells + goals]
    p = _softmax(logits / temperature)
    p[np.arange(len(labels)), labels] -= 1.0
    p /= temperature * len(labels)
    grad = np.zeros_like(weights)
    np.add.at(grad, cells, p)
    if goal_conditioned:
        np.add.at(grad, n_cells + goals, p)
    return grad


def _sgd_step(model, weights, cells, goals, labels, learning_rate) -> None:
    grad = policy_nll_grad(
        weights, cells, goals, labels, model.n_cells, model.goal_conditioned, model.temperature
    )
    weights -= learning_rate * grad


def update_policy(
    model: PolicyModel,
    dataset: Dataset,
    steps: int,
    batch_size: int,
    rng: np.random.Generator,
    learning_rate: float = 0.5,
) -> PolicyModel:
    """Run ``steps`` SGD cross-entropy updates on uniform minibatches.

    Ensemble members draw their minibatches from their own bootstrap index
    sets and skip steps while those sets are still empty. An empty dataset
    is a warned no-op.
    """
    if len(dataset) == 0:
        warnings.warn("policy update skipped: dataset is empty")
        return model
    model.register_pairs(len(dataset), rng)
    cells, goals, labels = dataset.to_arrays()
    for _ in range(steps):
        if model.is_ensemble:
            for b, member_set in enumerate(model.member_indices):
                if not member_set:
                    continue
                pool = np.asarray(member_set)
                idx = pool[rng.integers(0, len(pool), size=batch_size)]
                _sgd_step(
                    model, model.members[b], cells[idx], goals[idx], labels[idx], learning_rate
                )
        else:
            idx = rng.integers(0, len(labels), size=batch_size)
            _sgd_step(model, model.weights, cells[idx], goals[idx], labels[idx], learning_rate)
    return model


# -- pretraining rollouts -----------------------------------------------------


@dataclass
class RawTransitions:
    """Single-robot rollout transitions with fault/success/episode-end flags."""

    cells: np.ndarray
    goals: np.ndarray
    actions: np.ndarray
    next_cells: np.ndarray
    violated: np.ndarray
    succeeded: np.ndarray
    done: np.ndarray

    @property
    def n(self) -> int:
        return len(self.actions)


def collect_pretraining_data(
    env: GridEnv,
    actor: Callable[[RobotState], object],
    timesteps: int,
    rng: np.random.Generator,
) -> RawTransitions:
    """Roll one robot for ``timesteps`` steps, resetting on fault/success/horizon.

    ``actor`` maps a robot state to an action index (or ``SupervisorAction``).
    Faults end the episode immediately (offline collection stands in for the
    hard reset), so the actor is never queried in a fault cell.
    """
    cells, goals, actions, next_cells = [], [], [], []
    violated, succeeded, done = [], [], []
    state = env.sample_initial(rng)
    for _ in range(timesteps):
        action = actor(state)
        idx = int(action.value) if isinstance(action, SupervisorAction) else int(action)
        nxt = env.transition(state.env_state, idx)
        hit_fault = env.is_fault(nxt)
        hit_goal = nxt == state.goal and not hit_fault
        step = state.episode_step + 1
        truncated = env.spec.horizon is not None and step >= env.spec.horizon
        cells.append(env.cell_index(state.env_state))
        goals.append(env.cell_index(state.goal))
        actions.append(idx)
        next_cells.append(env.cell_index(nxt))
        violated.append(hit_fault)
        succeeded.append(hit_goal)
        done.append(hit_fault or hit_goal or truncated)
        if done[-1]:
            state = env.sample_initial(rng)
        else:
            state = replace(state, env_state=nxt, episode_step=step)
    return RawTransitions(
        cells=np.asarray(cells, dtype=np.int64),
        goals=np.asarray(goals, dtype=np.int64),
        actions=np.asarray(actions, dtype=np.int64),
        next_cells=np.asarray(next_cells, dtype=np.int64),
        violated=np.asarray(violated, dtype=bool),
        succeeded=np.asarray(succeeded, dtype=bool),
        done=np.asarray(done, dtype=bool),
    )


def constraint_dataset_stats(raw: RawTransitions) -> tuple[int, int]:
    """(transition count, fault-entry count) for reporting a pretraining set."""
    if raw.n == 0:
        return 0, 0
    return raw.n, int(raw.violated.sum())


def expert_dataset(env: GridEnv, n_pairs: int, rng: np.random.Generator) -> Dataset:
    """Offline behavior-cloning pairs from scripted-expert rollouts."""
    dataset = Dataset()
    state = env.sample_initial(rng)
    t = 0
    while len(dataset) < n_pairs:
        action = env.expert_action(state)
        if action.is_hard_reset:  # unreachable with expert behavior, guard anyway
            state = env.sample_initial(rng)
            continue
        idx = int(action.value)
        cell, goal = env.featurize(state)
        dataset.append(cell, goal, idx, t=t, robot_id=-1)
        nxt = env.transition(state.env_state, idx)
        t += 1
        if nxt == state.goal or env.is_fault(nxt):
            state = env.sample_initial(rng)
        else:
            state = replace(state, env_state=nxt, episode_step=state.episode_step + 1)
    return dataset


# -- critics -------------------------------------------------------------------


@dataclass
class CriticTransitions:
    """Index-space transitions for tabular Q-learning."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    positive: np.ndarray  # the sparse reward-1 event for this critic
    terminal: np.ndarray  # episode boundary: no bootstrapping through it

    @property
    def n(self) -> int:
        return len(self.a)


class CriticModel:
    """Tabular Q-function over indexed states; values clamped to [0, 1].

    ``kind`` is ``"safety"`` (discounted fault probability) or ``"goal"``
    (discounted success probability). ``index_fn`` maps whatever the caller
    treats as a state (robot states, chain positions, raw ints) to a row.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        gamma: float,
        kind: str,
        index_fn: Callable[[object], int] = lambda s: int(s),
        learning_rate: float = 0.5,
    ):
        if not 0 <= gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if kind not in (KIND_SAFETY, KIND_GOAL):
            raise ValueError(f"unknown critic kind {kind!r}")
        self.q = np.zeros((n_states, n_actions))
        self.gamma = float(gamma)
        self.kind = kind
        self.index_fn = index_fn
        self.learning_rate = float(learning_rate)

    def value(self, state, action: int) -> float:
        return float(self.q[self.index_fn(state), action])

    def values(self, state) -> np.ndarray:
        return self.q[self.index_fn(state)]


def make_safety_critic(env: GridEnv, gamma: float = 0.9, learning_rate: float = 0.5) -> CriticModel:
    """Fault-probability critic indexed by robot cell (goals are irrelevant to faults)."""
    return CriticModel(
        n_states=env.n_cells,
        n_actions=env.spec.action_arity,
        gamma=gamma,
        kind=KIND_SAFETY,
        index_fn=lambda state: env.cell_index(state.env_state),
        learning_rate=learning_rate,
    )


def make_goal_critic(env: GridEnv, gamma: float = 0.9, learning_rate: float = 0.5) -> CriticModel:
    """Success-probability critic indexed by (robot cell, goal cell)."""
    if not env.spec.goal_conditioned:
        raise ValueError("goal critic requires a goal-conditioned environment")
    n = env.n_cells
    return CriticModel(
        n_states=n * n,
        n_actions=env.spec.action_arity,
        gamma=gamma,
        kind=KIND_GOAL,
        index_fn=lambda state: env.cell_index(state.env_state) * n
        + env.cell_index(state.goal),
        learning_rate=learning_rate,
    )


def to_critic_transitions(raw: RawTransitions, kind: str, n_cells: int) -> CriticTransitions:
    """Project rollout transitions into a critic's state-index space."""
    if kind == KIND_SAFETY:
        s = raw.cells
        s_next = raw.next_cells
        positive = raw.violated
    elif kind == KIND_GOAL:
        s = raw.cells * n_cells + raw.goals
        s_next = raw.next_cells * n_cells + raw.goals
        positive = raw.succeeded
    else:
        raise ValueError(f"unknown critic kind {kind!r}")
    return CriticTransitions(
        s=s.copy(),
        a=raw.actions.copy(),
        s_next=s_next.copy(),
        positive=positive.copy(),
        terminal=raw.done.copy(),
    )


def sample_balanced_batch(
    positive_idx: np.ndarray,
    negative_idx: np.ndarray,
    batch_size: int,
    balance_fraction: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Minibatch indices with a fixed count of positive samples when possible."""
    n_pos = int(round(batch_size * balance_fraction)) if len(positive_idx) else 0
    n_pos = min(n_pos, batch_size)
    if len(negative_idx) == 0:
        n_pos = batch_size
    parts = []
    if n_pos:
        parts.append(positive_idx[rng.integers(0, len(positive_idx), size=n_pos)])
    if batch_size - n_pos:
        parts.append(negative_idx[rng.integers(0, len(negative_idx), size=batch_size - n_pos)])
    return np.concatenate(parts)


def train_critic(
    critic: CriticModel,
    transitions: CriticTransitions,
    gradient_steps: int,
    batch_size: int,
    balance_fraction: float = 0.25,
    rng: Optional[np.random.Generator] = None,
) -> CriticModel:
    """Tabular Q-learning toward ``r + gamma * max_a' Q(s', a')``.

    The sparse reward is 1 exactly on positive transitions; bootstrapping is
    cut at every episode boundary. Minibatches are drawn with
    ``balance_fraction`` positives whenever any exist; otherwise sampling
    degrades to uniform with a warning.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if transitions.n == 0:
        warnings.warn("critic training skipped: no transitions")
        return critic
    positive_idx = np.flatnonzero(transitions.positive)
    negative_idx = np.flatnonzero(~transitions.positive)
    if len(positive_idx) == 0:
        warnings.warn("no positive samples; critic minibatches fall back to uniform")
    for _ in range(gradient_steps):
        idx = sample_balanced_batch(positive_idx, negative_idx, batch_size, balance_fraction, rng)
        s = transitions.s[idx]
        a = transitions.a[idx]
        s_next = transitions.s_next[idx]
        reward = transitions.positive[idx].astype(float)
        cont = 1.0 - transitions.terminal[idx].astype(float)
        target = reward + critic.gamma * critic.q[s_next].max(axis=1) * cont
        td = target - critic.q[s, a]
        np.add.at(critic.q, (s, a), critic.learning_rate * td)
        np.clip(critic.q, 0.0, 1.0, out=critic.q)
    return critic
