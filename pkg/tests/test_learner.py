import numpy as np
import pytest

from fleetlearn import (
    AllocationMatrix,
    CriticModel,
    Dataset,
    FleetState,
    HARD_RESET_TOKEN,
    NO_INTERVENTION,
    PolicyModel,
    RobotState,
    SupervisorAction,
    act,
    aggregate,
    collect_pretraining_data,
    constraint_dataset_stats,
    make_gridworld,
    sample_balanced_batch,
    to_critic_transitions,
    train_critic,
    update_policy,
)
from fleetlearn.learner import (
    CriticTransitions,
    KIND_GOAL,
    KIND_SAFETY,
    expert_dataset,
    policy_nll,
    policy_nll_grad,
)

from oracles import chain_mdp, value_iteration_q


def fleet_of(env, cells_and_goals, t=0):
    robots = tuple(RobotState(env_state=c, goal=g) for c, g in cells_and_goals)
    return FleetState(robots, (NO_INTERVENTION,) * len(robots), t=t)


# -- aggregation (the training-set membership rule) ---------------------------


def test_aggregate_adds_teleop_pair(grid5):
    data = Dataset()
    fleet = fleet_of(grid5, [((1, 1), (4, 4)), ((2, 2), (4, 4))], t=17)
    alloc = AllocationMatrix(np.array([[1], [0]]), 2, 1)
    aggregate(data, fleet, alloc, {0: SupervisorAction(2)}, grid5)
    assert len(data) == 1
    assert data.actions.tolist() == [2]
    assert data.provenance == [(17, 0)]
    cell, goal = grid5.featurize(fleet.robots[0])
    assert data.cells.tolist() == [cell]
    assert data.goals.tolist() == [goal]


def test_aggregate_skips_hard_resets(grid5):
    data = Dataset()
    fleet = fleet_of(grid5, [((1, 1), (4, 4))])
    alloc = AllocationMatrix(np.array([[1]]), 1, 1)
    aggregate(data, fleet, alloc, {0: SupervisorAction(HARD_RESET_TOKEN)}, grid5)
    assert len(data) == 0


def test_aggregate_without_allocations_is_noop(grid5):
    data = Dataset()
    fleet = fleet_of(grid5, [((1, 1), (4, 4))])
    aggregate(data, fleet, AllocationMatrix.empty(1, 1), {}, grid5)
    assert len(data) == 0


def test_aggregate_rejects_unallocated_robot(grid5):
    data = Dataset()
    fleet = fleet_of(grid5, [((1, 1), (4, 4)), ((2, 2), (4, 4))])
    alloc = AllocationMatrix(np.array([[1], [0]]), 2, 1)
    with pytest.raises(ValueError):
        aggregate(data, fleet, alloc, {1: SupervisorAction(0)}, grid5)


def test_dataset_export_import_round_trip(tmp_path):
    data = Dataset()
    for k in range(10):
        data.append(cell=k, goal=2 * k, action=k % 4, t=k, robot_id=k % 3)
    path = tmp_path / "pairs.csv"
    data.export(path)
    back = Dataset.load(path)
    assert back.cells.tolist() == data.cells.tolist()
    assert back.goals.tolist() == data.goals.tolist()
    assert back.actions.tolist() == data.actions.tolist()
    assert back.provenance == data.provenance


# -- policy -------------------------------------------------------------------


def test_untrained_model_is_uniform_and_picks_action_zero():
    model = PolicyModel(n_cells=25, n_actions=4)
    action, dist = act(model, cell=3, goal=20)
    assert action == 0
    assert np.allclose(dist, 0.25)


def test_zero_steps_leave_weights_unchanged():
    model = PolicyModel(25, 4)
    data = Dataset()
    data.append(3, 20, 1, t=0, robot_id=0)
    before = model.weights.copy()
    update_policy(model, data, steps=0, batch_size=8, rng=np.random.default_rng(0))
    assert np.array_equal(model.weights, before)


def test_empty_dataset_update_warns_and_is_noop():
    model = PolicyModel(25, 4)
    before = model.weights.copy()
    with pytest.warns(UserWarning):
        update_policy(model, Dataset(), steps=10, batch_size=8, rng=np.random.default_rng(0))
    assert np.array_equal(model.weights, before)


def test_single_pair_is_memorized():
    model = PolicyModel(25, 4)
    data = Dataset()
    data.append(7, 12, 3, t=0, robot_id=0)
    update_policy(model, data, steps=500, batch_size=4, rng=np.random.default_rng(0))
    action, dist = act(model, 7, 12)
    assert action == 3
    assert dist[3] > 0.95


def test_contradictory_labels_converge_to_empirical_split():
    model = PolicyModel(25, 4)
    data = Dataset()
    for k in range(64):
        data.append(7, 12, k % 2, t=k, robot_id=0)  # 50/50 between actions 0 and 1
    update_policy(model, data, steps=3000, batch_size=64, rng=np.random.default_rng(0))
    _, dist = act(model, 7, 12)
    assert dist[0] == pytest.approx(0.5, abs=0.05)
    assert dist[1] == pytest.approx(0.5, abs=0.05)


def test_memorized_state_acts_its_label():
    model = PolicyModel(25, 4)
    data = Dataset()
    data.append(7, 12, 2, t=0, robot_id=0)
    data.append(9, 12, 1, t=1, robot_id=0)
    update_policy(model, data, steps=800, batch_size=8, rng=np.random.default_rng(1))
    assert act(model, 7, 12)[0] == 2
    assert act(model, 9, 12)[0] == 1


def test_ensemble_act_is_mean_of_member_distributions():
    model = PolicyModel(9, 4, ensemble_size=3)
    rng = np.random.default_rng(5)
    for w in model.members:
        w += rng.normal(size=w.shape)
    members = model.member_distributions(cell=2, goal=5)
    _, dist = act(model, 2, 5)
    assert np.allclose(dist, members.mean(axis=0))


def test_disjoint_bootstrap_sets_train_independently():
    model = PolicyModel(9, 4, ensemble_size=2, bootstrap_p=0.0)
    data = Dataset()
    data.append(1, 2, 0, t=0, robot_id=0)
    data.append(3, 4, 1, t=1, robot_id=0)
    model.register_pairs(2, np.random.default_rng(0))
    model.member_indices[0][:] = [0]
    model.member_indices[1][:] = [1]
    model.pairs_registered = 2
    before_1 = model.members[1].copy()
    # freeze member 1 by training only member 0's set: emulate by clearing set 1
    saved = model.member_indices[1][:]
    model.member_indices[1][:] = []
    update_policy(model, data, steps=50, batch_size=4, rng=np.random.default_rng(2))
    assert not np.array_equal(model.members[0], np.zeros_like(model.members[0]))
    assert np.array_equal(model.members[1], before_1)
    model.member_indices[1][:] = saved


def test_gradient_matches_central_finite_differences():
    rng = np.random.default_rng(12)
    n_cells, n_actions, batch = 6, 4, 5
    worst = 0.0
    for _ in range(100):
        weights = rng.normal(scale=0.7, size=(2 * n_cells, n_actions))
        cells = rng.integers(0, n_cells, size=batch)
        goals = rng.integers(0, n_cells, size=batch)
        labels = rng.integers(0, n_actions, size=batch)
        grad = policy_nll_grad(weights, cells, goals, labels, n_cells)
        # probe a handful of coordinates with central differences
        h = 1e-6
        for _ in range(6):
            i = rng.integers(0, weights.shape[0])
            j = rng.integers(0, weights.shape[1])
            w_plus = weights.copy()
            w_plus[i, j] += h
            w_minus = weights.copy()
            w_minus[i, j] -= h
            fd = (
                policy_nll(w_plus, cells, goals, labels, n_cells)
                - policy_nll(w_minus, cells, goals, labels, n_cells)
            ) / (2 * h)
            denom = max(abs(fd), abs(grad[i, j]), 1e-8)
            worst = max(worst, abs(fd - grad[i, j]) / denom)
    assert worst < 1e-5


# -- pretraining rollouts ---------------------------------------------------------


def test_expert_rollouts_have_successes_and_no_faults(grid_hazard, rng):
    raw = collect_pretraining_data(grid_hazard, grid_hazard.expert_action, 2000, rng)
    count, faults = constraint_dataset_stats(raw)
    assert count == 2000
    assert faults == 0
    assert raw.succeeded.sum() > 0


def test_random_policy_on_hazard_ring_hits_faults(rng):
    border = [(x, y) for x in range(5) for y in range(5) if x in (0, 4) or y in (0, 4)]
    env = make_gridworld(5, 5, hazard_cells=border, start_dist=[(2, 2)], goal_dist=[(1, 1), (2, 1)])
    raw = collect_pretraining_data(env, lambda s: int(rng.integers(4)), 500, rng)
    _, faults = constraint_dataset_stats(raw)
    assert faults > 0


def test_zero_timesteps_empty_rollout(grid5, rng):
    raw = collect_pretraining_data(grid5, grid5.expert_action, 0, rng)
    assert constraint_dataset_stats(raw) == (0, 0)


def test_expert_dataset_actions_match_expert(grid5, rng):
    data = expert_dataset(grid5, 50, rng)
    assert len(data) == 50
    assert set(data.actions.tolist()) <= {0, 1, 2, 3}


# -- critics ------------------------------------------------------------------------


def chain_transitions(reps=200, absorbing=True):
    next_state, reward, terminal = chain_mdp(5, absorbing_safe_end=absorbing)
    s, a = np.meshgrid(np.arange(5), np.arange(2), indexing="ij")
    s, a = s.ravel(), a.ravel()
    return next_state, reward, terminal, CriticTransitions(
        s=np.tile(s, reps),
        a=np.tile(a, reps),
        s_next=np.tile(next_state[s, a], reps),
        positive=np.tile(reward[s, a] > 0, reps),
        terminal=np.tile(terminal[s, a], reps),
    )


def test_terminal_sparse_reward_learned_exactly():
    _, _, _, transitions = chain_transitions()
    critic = CriticModel(5, 2, gamma=0.9, kind=KIND_SAFETY)
    train_critic(critic, transitions, gradient_steps=2000, batch_size=16,
                 rng=np.random.default_rng(0))
    assert critic.value(1, 0) == 1.0  # geometric approach saturates in float64


def test_critic_matches_value_iteration_oracle():
    next_state, reward, terminal, transitions = chain_transitions()
    critic = CriticModel(5, 2, gamma=0.9, kind=KIND_SAFETY)
    train_critic(critic, transitions, gradient_steps=4000, batch_size=32,
                 rng=np.random.default_rng(1))
    oracle = value_iteration_q(next_state, reward, terminal, gamma=0.9)
    assert np.abs(critic.q - oracle).max() < 1e-3


def test_balanced_batches_hold_exact_positive_count():
    rng = np.random.default_rng(2)
    positive = np.arange(3)
    negative = np.arange(3, 100)
    for _ in range(50):
        idx = sample_balanced_batch(positive, negative, batch_size=8,
                                    balance_fraction=0.25, rng=rng)
        assert len(idx) == 8
        assert int(np.isin(idx, positive).sum()) == 2


def test_no_positives_degrades_to_uniform_with_warning():
    transitions = CriticTransitions(
        s=np.zeros(10, dtype=int),
        a=np.zeros(10, dtype=int),
        s_next=np.ones(10, dtype=int),
        positive=np.zeros(10, dtype=bool),
        terminal=np.zeros(10, dtype=bool),
    )
    critic = CriticModel(2, 1, gamma=0.9, kind=KIND_SAFETY)
    with pytest.warns(UserWarning):
        train_critic(critic, transitions, 10, 4, rng=np.random.default_rng(0))


def test_safety_critic_values_stay_in_unit_interval(grid_hazard, rng):
    raw = collect_pretraining_data(grid_hazard, lambda s: int(rng.integers(4)), 3000, rng)
    transitions = to_critic_transitions(raw, KIND_SAFETY, grid_hazard.n_cells)
    critic = CriticModel(grid_hazard.n_cells, 4, gamma=0.9, kind=KIND_SAFETY)
    train_critic(critic, transitions, 2000, 64, rng=rng)
    assert critic.q.min() >= 0.0
    assert critic.q.max() <= 1.0 + 1e-6


def test_goal_transitions_index_cell_goal_pairs(grid5, rng):
    raw = collect_pretraining_data(grid5, grid5.expert_action, 100, rng)
    transitions = to_critic_transitions(raw, KIND_GOAL, grid5.n_cells)
    assert transitions.s.max() < grid5.n_cells * grid5.n_cells
    assert (transitions.positive == raw.succeeded).all()
