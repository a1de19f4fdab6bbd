"""Fleet basics: environments, fault states, experts, and the step loop.

Builds the two desk environments, walks a tiny fleet through a few
synchronized steps, and shows the three robot modes (progressing, stuck in
a fault, being hard-reset) in an ASCII rendering.
"""

import numpy as np

from fleetlearn import (
    FleetState,
    InterventionRecord,
    KIND_HARD_RESET,
    constraint,
    expert_policy,
    initial_fleet,
    make_blockpush,
    make_gridworld,
    step_fleet,
)
from fleetlearn.envs import ACTION_NAMES


def render(env, fleet):
    glyphs = {cell: "#" for cell in env.fault_cells}
    for i, robot in enumerate(fleet.robots):
        glyphs[robot.goal] = glyphs.get(robot.goal, "*")
    for i, robot in enumerate(fleet.robots):
        glyphs[robot.env_state] = str(i)
    rows = []
    for y in range(env.height):
        rows.append("".join(glyphs.get((x, y), ".") for x in range(env.width)))
    return "\n".join(rows)


def main():
    env = make_gridworld(8, 8, hazard_cells=[(3, 3), (4, 4), (2, 5)])
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(7).spawn(3)]
    fleet = initial_fleet(env, 3, rngs)

    print("A 3-robot gridworld fleet ('#' hazards, '*' goals, digits robots):")
    print(render(env, fleet))

    print("\nExpert suggestions per robot:")
    for i, robot in enumerate(fleet.robots):
        action = expert_policy(robot, env)
        label = "HARD RESET" if action.is_hard_reset else ACTION_NAMES[action.value]
        print(f"  robot {i} at {robot.env_state} -> goal {robot.goal}: {label}")

    print("\nStepping the fleet with expert actions for 5 synchronized steps:")
    for _ in range(5):
        actions = [expert_policy(r, env) for r in fleet.robots]
        fleet, rewards, faults = step_fleet(env, fleet, actions, rngs, hard_reset_steps=5)
        print(f"  t={fleet.t}: rewards={rewards} faults={faults}")

    # Force a fault and show the freeze + reset cycle.
    print("\nA robot pushed into a hazard freezes until a 5-step hard reset finishes:")
    stuck = fleet.robots[0].__class__(env_state=(3, 3), episode_step=2, goal=fleet.robots[0].goal)
    one = FleetState((stuck,), (InterventionRecord(None, 0, None),), t=0)
    print(f"  fault cell? {constraint(stuck, env)}")
    for k in range(5):
        record = InterventionRecord(KIND_HARD_RESET, duration=k, human_id=0)
        one = FleetState(one.robots, (record,), one.t)
        one, _, faults = step_fleet(env, one, [None], rngs, hard_reset_steps=5)
        print(f"  reset step {k + 1}: state={one.robots[0].env_state} fault={faults[0]}")

    push = make_blockpush(8, boundary_margin=1)
    print(f"\nBlock pushing on 8x8: {len(push.free_cells)} interior cells are safe;")
    print("pushing the cube into the one-cell boundary band is a fault:")
    print(render(push, initial_fleet(push, 2, rngs[:2])))


if __name__ == "__main__":
    main()
