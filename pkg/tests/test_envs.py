import dataclasses

import numpy as np
import pytest

from fleetlearn import (
    FleetState,
    HARD_RESET_TOKEN,
    InterventionRecord,
    KIND_HARD_RESET,
    NO_INTERVENTION,
    RobotState,
    SupervisorAction,
    constraint,
    expert_policy,
    initial_fleet,
    make_blockpush,
    make_gridworld,
    step_fleet,
)
from fleetlearn.envs import DOWN, LEFT, RIGHT, UP

from oracles import lex_shortest_first_action


def state_at(cell, goal=(0, 0), step=0):
    return RobotState(env_state=cell, episode_step=step, goal=goal)


def rngs_for(n, seed=0):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# -- constraint -------------------------------------------------------------


def test_gridworld_hazard_cell_is_fault(grid_hazard):
    assert constraint(state_at((2, 2)), grid_hazard) is True


def test_gridworld_free_cell_is_not_fault(grid_hazard):
    assert constraint(state_at((0, 0)), grid_hazard) is False


def test_blockpush_boundary_cell_is_fault(push8):
    assert constraint(state_at((0, 3)), push8) is True
    assert constraint(state_at((4, 4)), push8) is False


def test_constraint_rejects_out_of_grid_state(grid5):
    with pytest.raises(ValueError):
        constraint(state_at((9, 9)), grid5)


# -- single-step dynamics -----------------------------------------------------


def single_step(env, state, action, record=NO_INTERVENTION, hard_reset_steps=5, seed=3):
    fleet = FleetState((state,), (record,), t=7)
    return step_fleet(env, fleet, [action], rngs_for(1, seed), hard_reset_steps)


def test_move_up_decrements_y(grid5):
    nxt, rewards, _ = single_step(grid5, state_at((2, 3), goal=(4, 4)), UP)
    assert nxt.robots[0].env_state == (2, 2)
    assert nxt.robots[0].episode_step == 1
    assert rewards == [0.0]


def test_wall_move_is_noop(grid5):
    nxt, _, _ = single_step(grid5, state_at((0, 0), goal=(4, 4)), LEFT)
    assert nxt.robots[0].env_state == (0, 0)
    assert nxt.robots[0].episode_step == 1


def test_unattended_fault_freezes_with_zero_reward(grid_hazard):
    stuck = state_at((2, 2), goal=(7, 7), step=9)
    for action in (UP, DOWN, LEFT, RIGHT):
        nxt, rewards, viol = single_step(grid_hazard, stuck, action)
        assert nxt.robots[0] == stuck
        assert rewards == [0.0]
        assert viol == [True]


def test_hard_reset_freezes_until_final_step(grid_hazard):
    stuck = state_at((2, 2), goal=(7, 7), step=4)
    for duration in range(0, 3):  # durations with duration+1 < 5
        rec = InterventionRecord(KIND_HARD_RESET, duration=duration, human_id=0)
        nxt, rewards, _ = single_step(grid_hazard, stuck, None, record=rec)
        assert nxt.robots[0] is stuck or nxt.robots[0] == stuck  # bit-identical freeze
        assert rewards == [0.0]


def test_hard_reset_completion_resamples(grid_hazard):
    stuck = state_at((2, 2), goal=(7, 7), step=4)
    rec = InterventionRecord(KIND_HARD_RESET, duration=4, human_id=0)
    nxt, rewards, viol = single_step(grid_hazard, stuck, None, record=rec, hard_reset_steps=5)
    fresh = nxt.robots[0]
    assert fresh.episode_step == 0
    assert not grid_hazard.is_fault(fresh.env_state)
    assert viol == [False]
    assert rewards == [0.0]


def test_fresh_reset_token_freezes_then_unsupported_elsewhere(grid_hazard):
    stuck = state_at((2, 2), goal=(7, 7))
    nxt, _, _ = single_step(grid_hazard, stuck, SupervisorAction(HARD_RESET_TOKEN))
    assert nxt.robots[0] == stuck  # first of 5 reset steps: frozen
    with pytest.raises(ValueError):
        single_step(grid_hazard, state_at((0, 0), goal=(4, 4)), SupervisorAction(HARD_RESET_TOKEN))


def test_reaching_goal_pays_sparse_reward(grid5):
    nxt, rewards, _ = single_step(grid5, state_at((3, 4), goal=(4, 4)), RIGHT)
    assert rewards == [1.0]
    assert nxt.robots[0].env_state == (4, 4)


def test_soft_reset_fires_on_the_step_after_goal(grid5):
    on_goal = RobotState(env_state=(4, 4), episode_step=8, goal=(4, 4), episode_reward=1.0)
    nxt, rewards, _ = single_step(grid5, on_goal, UP)
    fresh = nxt.robots[0]
    assert fresh.episode_step == 0
    assert fresh.episode_reward == 0.0
    assert rewards == [0.0]


def test_horizon_triggers_soft_reset():
    env = make_gridworld(5, 5, horizon=10)
    timed_out = RobotState(env_state=(1, 1), episode_step=10, goal=(4, 4))
    nxt, rewards, _ = single_step(env, timed_out, UP)
    assert nxt.robots[0].episode_step == 0
    assert rewards == [0.0]


def test_action_index_out_of_range_is_rejected(grid5):
    with pytest.raises(ValueError):
        single_step(grid5, state_at((1, 1), goal=(4, 4)), 7)


def test_one_action_per_robot_required(grid5):
    fleet = initial_fleet(grid5, 3, rngs_for(3))
    with pytest.raises(ValueError):
        step_fleet(grid5, fleet, [0, 1], rngs_for(3), 5)


def test_missing_action_for_active_robot_rejected(grid5):
    fleet = initial_fleet(grid5, 1, rngs_for(1))
    with pytest.raises(ValueError):
        step_fleet(grid5, fleet, [None], rngs_for(1), 5)


# -- fleet-level properties ----------------------------------------------------


def test_synchrony_every_step_advances_shared_clock(grid_hazard):
    fleet = initial_fleet(grid_hazard, 4, rngs_for(4))
    assert fleet.t == 0
    rngs = rngs_for(4, seed=9)
    for k in range(5):
        fleet, _, _ = step_fleet(grid_hazard, fleet, [0, 1, 2, 3], rngs, 5)
        assert fleet.t == k + 1


def test_fixed_seed_reproduces_identical_state_streams(grid_hazard):
    def run():
        rngs = rngs_for(3, seed=42)
        fleet = initial_fleet(grid_hazard, 3, rngs)
        stream = [fleet]
        action_rng = np.random.default_rng(7)
        for _ in range(40):
            actions = [int(action_rng.integers(4)) for _ in range(3)]
            actions = [a if not grid_hazard.is_fault(fleet.robots[i].env_state) else None
                       for i, a in enumerate(actions)]
            # unattended faults still need a placeholder action, not None
            actions = [a if a is not None else 0 for a in actions]
            fleet, _, _ = step_fleet(grid_hazard, fleet, actions, rngs, 5)
            stream.append(fleet)
        return stream

    assert run() == run()


def test_rewards_are_sparse_zero_or_one(grid_hazard):
    rngs = rngs_for(4, seed=21)
    fleet = initial_fleet(grid_hazard, 4, rngs)
    action_rng = np.random.default_rng(2)
    seen = set()
    for _ in range(300):
        actions = [int(action_rng.integers(4)) for _ in range(4)]
        fleet, rewards, _ = step_fleet(grid_hazard, fleet, actions, rngs, 5)
        seen.update(rewards)
    assert seen <= {0.0, 1.0}
    assert 1.0 in seen  # at least one episode actually completed


def test_two_humans_cannot_share_a_record():
    rec = InterventionRecord(KIND_HARD_RESET, duration=1, human_id=0)
    with pytest.raises(ValueError):
        FleetState(
            robots=(state_at((0, 0)), state_at((1, 1))),
            interventions=(rec, rec),
        )


# -- expert ---------------------------------------------------------------------


def test_expert_requests_reset_in_fault_state(grid_hazard):
    action = expert_policy(state_at((2, 2), goal=(7, 7)), grid_hazard)
    assert action.is_hard_reset


def test_expert_one_step_left_of_goal_moves_right(grid5):
    action = expert_policy(state_at((3, 4), goal=(4, 4)), grid5)
    assert action.value == RIGHT


def test_expert_tie_on_empty_5x5_prefers_down(grid5):
    action = expert_policy(state_at((0, 0), goal=(4, 4)), grid5)
    assert action.value == DOWN
    assert lex_shortest_first_action(5, 5, set(), (0, 0), (4, 4)) == DOWN


def test_expert_matches_sequence_bfs_oracle_everywhere(grid_hazard):
    goal = (7, 7)
    for cell in grid_hazard.free_cells:
        if cell == goal:
            continue
        want = lex_shortest_first_action(8, 8, grid_hazard.fault_cells, cell, goal)
        got = expert_policy(state_at(cell, goal=goal), grid_hazard)
        assert got.value == want, f"divergence at {cell}"


def test_expert_soundness_exhaustive(grid_hazard):
    # From every free start to every corner goal: reaches within w*h steps,
    # never touching a hazard cell.
    for goal in [(0, 0), (7, 7), (7, 0)]:
        if grid_hazard.is_fault(goal):
            continue
        for start in grid_hazard.free_cells:
            cell = start
            for _ in range(8 * 8):
                if cell == goal:
                    break
                action = expert_policy(state_at(cell, goal=goal), grid_hazard)
                assert not action.is_hard_reset
                cell = grid_hazard.transition(cell, int(action.value))
                assert not grid_hazard.is_fault(cell)
            assert cell == goal


def test_expert_flags_unreachable_goal():
    # A wall of hazards separates the left and right columns.
    env = make_gridworld(3, 3, hazard_cells=[(1, 0), (1, 1), (1, 2)])
    before = env.unreachable_episodes
    action = expert_policy(state_at((0, 0), goal=(2, 0)), env)
    assert action.value == env.fallback_action
    assert env.unreachable_episodes == before + 1


# -- construction -----------------------------------------------------------------


def test_gridworld_start_cells_must_avoid_hazards():
    with pytest.raises(ValueError):
        make_gridworld(4, 4, hazard_cells=[(1, 1)], start_dist=[(1, 1)])


def test_gridworld_without_free_cells_fails():
    with pytest.raises(ValueError):
        make_gridworld(2, 1, hazard_cells=[(0, 0), (1, 0)])


def test_hazard_border_interior_start_eventually_faults():
    border = [(x, y) for x in range(4) for y in range(4) if x in (0, 3) or y in (0, 3)]
    env = make_gridworld(4, 4, hazard_cells=border, start_dist=[(1, 1)], goal_dist=[(2, 2)])
    cell = (1, 1)
    for _ in range(3):  # walk left: off the free interior in <= 3 moves
        cell = env.transition(cell, LEFT)
        if env.is_fault(cell):
            break
    assert env.is_fault(cell)


def test_blockpush_needs_at_least_4x4():
    with pytest.raises(ValueError):
        make_blockpush(3)


def test_blockpush_free_cell_count_k8_margin1(push8):
    # Independent enumeration of the 8x8 board minus the one-cell border.
    expected = sum(
        1
        for x in range(8)
        for y in range(8)
        if 1 <= x <= 6 and 1 <= y <= 6
    )
    assert expected == 36
    assert len(push8.free_cells) == 36


def test_blockpush_corner_exclusions_shrink_free_region():
    env = make_blockpush(8, boundary_margin=1, corner_exclusions=[("ne", 2), ("sw", 2)])
    assert env.is_fault((6, 1)) and env.is_fault((1, 6))
    assert not env.is_fault((1, 1))
    assert len(env.free_cells) == 36 - 2  # each 2x2 cutout removes one free cell


def test_blockpush_push_toward_goal_succeeds(push8):
    nxt, rewards, _ = single_step(push8, state_at((4, 4), goal=(5, 4)), RIGHT)
    assert rewards == [1.0]


def test_blockpush_push_into_band_violates(push8):
    nxt, rewards, viol = single_step(push8, state_at((1, 4), goal=(6, 6)), LEFT)
    assert viol == [True]
    assert rewards == [0.0]
    assert nxt.robots[0].episode_violated


def test_goal_sampler_retries_then_fails(rng):
    env = make_blockpush(8, goal_dist=lambda r: (0, 0))  # always in the band
    with pytest.raises(RuntimeError):
        env.sample_initial(rng)


def test_sample_initial_never_starts_on_goal(grid5, rng):
    for _ in range(200):
        state = grid5.sample_initial(rng)
        assert state.env_state != state.goal
        assert not grid5.is_fault(state.env_state)


def test_per_robot_start_distributions():
    # two-argument samplers see the robot index; robots 0/1 get distinct homes
    homes = {0: (1, 1), 1: (3, 3), None: (2, 2)}
    env = make_gridworld(5, 5, start_dist=lambda rng, robot: homes[robot])
    fleet = initial_fleet(env, 2, rngs_for(2))
    assert fleet.robots[0].env_state == (1, 1)
    assert fleet.robots[1].env_state == (3, 3)
    # hard-reset resampling honors the same per-robot distribution
    stuck = RobotState(env_state=(1, 1), episode_step=0, goal=(4, 4))
    rec = InterventionRecord(KIND_HARD_RESET, duration=4, human_id=0)
    one = FleetState((stuck, fleet.robots[1]), (rec, NO_INTERVENTION), t=0)
    nxt, _, _ = step_fleet(env, one, [None, 0], rngs_for(2), 5)
    assert nxt.robots[0].env_state == (1, 1)  # robot 0's own distribution
