"""Allocator walkthrough: continuation, sticky holds, and priority sorting.

Traces the assignment matrix step by step on a hand-built 4-robot, 2-human
scenario so each clause is visible: ongoing interventions hold their human
for the minimum service time, zero-priority robots are never newly
assisted, and freed humans go to the highest-priority unassisted robots.
"""

import numpy as np

from fleetlearn import (
    AllocationMatrix,
    AllocatorConfig,
    NO_INTERVENTION,
    PriorityVector,
    advance_bookkeeping,
    allocate,
    begin_interventions,
    intervention_kind,
)


def show(alloc, records, note):
    pairs = ", ".join(f"robot{i}<-human{j}" for i, j in alloc.pairs()) or "none"
    active = ", ".join(
        f"robot{i}:{r.kind}@{r.duration}" for i, r in enumerate(records) if r.kind
    ) or "none"
    print(f"  {note}\n    assignments: {pairs}\n    records:     {active}")


def main():
    cfg = AllocatorConfig(min_teleop_steps=3, hard_reset_steps=5, sticky_reassignment=True)
    n, m = 4, 2
    alloc = AllocationMatrix.empty(n, m)
    records = (NO_INTERVENTION,) * n

    print("Step 0: robots score [3, 1, 2, 0]; two humans are free.")
    priorities = PriorityVector(np.array([3.0, 1.0, 2.0, 0.0]))
    violations = [False, False, False, False]
    alloc = allocate(priorities, alloc, records, violations, cfg)
    kinds = [intervention_kind(i, violations, alloc) for i in range(n)]
    records = advance_bookkeeping(records, alloc, kinds, cfg.hard_reset_steps)
    show(alloc, records, "humans take the two highest scores (robot 0 and robot 2)")

    print("\nStep 1: robot 1 now scores 9, but both teleops are under the 3-step minimum.")
    priorities = PriorityVector(np.array([0.0, 9.0, 0.0, 0.0]))
    alloc = allocate(priorities, alloc, records, violations, cfg)
    kinds = [intervention_kind(i, violations, alloc) for i in range(n)]
    records = advance_bookkeeping(records, alloc, kinds, cfg.hard_reset_steps)
    show(alloc, records, "minimum service time wins: nobody moves")

    print("\nSteps 2-3: scores stay [0, 9, 2, 0]; after 3 teleop steps human 0 frees up.")
    for _ in range(2):
        priorities = PriorityVector(np.array([0.0, 9.0, 2.0, 0.0]))
        alloc = allocate(priorities, alloc, records, violations, cfg)
        kinds = [intervention_kind(i, violations, alloc) for i in range(n)]
        records = advance_bookkeeping(records, alloc, kinds, cfg.hard_reset_steps)
    show(alloc, records, "robot 0 hit zero priority -> released; robot 1 picked up")
    print("    (robot 2 kept its human via the sticky hold: its score stayed positive)")

    print("\nStep 4: robot 3 breaks (fault) while scores are [0, 9, 2, 6].")
    violations = [False, False, False, True]
    priorities = PriorityVector(np.array([0.0, 9.0, 2.0, 6.0]))
    alloc = allocate(priorities, alloc, records, violations, cfg)
    kinds = [intervention_kind(i, violations, alloc) for i in range(n)]
    staged = begin_interventions(records, alloc, kinds)
    show(alloc, staged, "both humans are held, so the fault must wait its turn")

    print("\nSame step with sticky_reassignment=False (verbatim re-sort after minimums):")
    verbatim = AllocatorConfig(3, 5, sticky_reassignment=False)
    alloc2 = allocate(priorities, alloc, records, violations, verbatim)
    kinds2 = [intervention_kind(i, violations, alloc2) for i in range(n)]
    show(alloc2, begin_interventions(records, alloc2, kinds2),
         "robot 2 (past its minimum) loses its human to the broken robot 3")


if __name__ == "__main__":
    main()
