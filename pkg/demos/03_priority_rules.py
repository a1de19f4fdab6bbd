"""Priority rules side by side on one synthetic fleet snapshot.

Eight robots in different situations (confident, uncertain, broken, at
risk) are scored by every rule so the banding is visible: a composite score
above 3000 means "fault band", 2000s mean "uncertainty band", 1000s mean
"risk band", and 0 means "leave alone".
"""

import numpy as np

from fleetlearn import (
    PriorityConfig,
    RunningStats,
    compose_cur,
    compose_ugc,
    compose_uc,
    constraint_priority,
    entropy_uncertainty,
    random_priority,
)

SITUATIONS = [
    ("confident, safe", [0.97, 0.01, 0.01, 0.01], False, 0.05),
    ("confident, safe", [0.94, 0.02, 0.02, 0.02], False, 0.10),
    ("mildly unsure", [0.88, 0.08, 0.02, 0.02], False, 0.20),
    ("torn two ways", [0.48, 0.48, 0.02, 0.02], False, 0.30),
    ("clueless", [0.25, 0.25, 0.25, 0.25], False, 0.40),
    ("broken (fault)", [0.25, 0.25, 0.25, 0.25], True, 0.00),
    ("broken (fault)", [0.90, 0.04, 0.03, 0.03], True, 0.00),
    ("about to break", [0.88, 0.06, 0.03, 0.03], False, 0.85),
]


def main():
    names = [s[0] for s in SITUATIONS]
    dists = [s[1] for s in SITUATIONS]
    violations = [s[2] for s in SITUATIONS]
    risk = np.array([s[3] for s in SITUATIONS])
    entropy = np.array([entropy_uncertainty(d) for d in dists])

    cfg = PriorityConfig(
        uncertainty_threshold=0.3, risk_threshold=0.5, initial_no_reset_steps=100
    )
    goal_failure = np.clip(risk * 0.8 + 0.1, 0, 1)  # stand-in goal-critic scores

    stats_u, stats_g = RunningStats(), RunningStats()
    stats_u.update_many(entropy)
    stats_g.update_many(goal_failure)

    rules = {
        "constraint": constraint_priority(violations).scores,
        "random": random_priority(np.random.default_rng(0), len(names), 0.5).scores,
        "uc": compose_uc(entropy, violations, cfg.uncertainty_threshold).scores,
        "ugc": compose_ugc(
            entropy, goal_failure, violations, stats_u, stats_g, 0.5, threshold=0.2
        ).scores,
        "cur (warm-up)": compose_cur(violations, entropy, risk, t=0, cfg=cfg).scores,
        "cur (after)": compose_cur(violations, entropy, risk, t=200, cfg=cfg).scores,
    }

    width = max(len(n) for n in names)
    header = f"{'robot':<{width}}  entropy  risk " + "".join(f"{r:>14}" for r in rules)
    print(header)
    print("-" * len(header))
    for i, name in enumerate(names):
        row = f"{name:<{width}}  {entropy[i]:7.3f}  {risk[i]:4.2f}"
        for scores in rules.values():
            row += f"{scores[i]:14.2f}"
        print(row)

    print("\nNotes:")
    print("- 'cur (warm-up)' zeroes broken robots: early supervision is worth more")
    print("  as teleoperation data than as resets, so faults wait out the warm-up.")
    print("- 'uc' ranks the clueless robot above the broken ones (uncertainty band")
    print("  sits above the fault band in that rule); 'cur (after)' does the opposite.")


if __name__ == "__main__":
    main()
