"""A full desk-scale experiment: C.U.R. against a budget-matched random baseline.

Runs both allocation rules over three seeds on the 20-robot gridworld,
matching the random baseline's expected human usage to what C.U.R.
actually used, then compares throughput and return on human effort. Saves
learning curves to demo_curves.png when matplotlib is available.
"""

import statistics
import tempfile
from dataclasses import replace

from fleetlearn import RunConfig, baseline_matching_budget, read_metrics_log, run_experiment


def main():
    out = tempfile.mkdtemp(prefix="fleetlearn-demo-")
    base = RunConfig(
        n_robots=20,
        m_humans=2,
        total_steps=1200,
        offline_pairs=200,
        offline_train_steps=400,
        priority="cur",
        initial_no_reset_steps=100,
        sticky_reassignment=False,  # verbatim re-sorting after minimum service
        seeds=(0, 1, 2),
        output_dir=out,
    )

    print("Running C.U.R. (3 seeds)...")
    cur = run_experiment(replace(base, run_name="cur"))
    matched = baseline_matching_budget(replace(base, priority="random", run_name="random"), cur)
    print(f"Matching the random baseline: threshold {matched.random_threshold:.3f} "
          f"(C.U.R. used {cur.mean_final('cum_human_steps'):.0f} human-steps on average)")
    rand = run_experiment(matched)

    print(f"\n{'rule':>8} {'seed':>4} {'successes':>9} {'resets':>7} {'idle':>7} "
          f"{'human':>6} {'rohe':>6}")
    for name, art in (("cur", cur), ("random", rand)):
        for seed in art.seeds:
            rec = art.final_records[seed]
            print(f"{name:>8} {seed:>4} {rec.cum_successes:>9} {rec.cum_hard_resets:>7} "
                  f"{rec.cum_idle_time:>7} {rec.cum_human_steps:>6} {rec.rohe:>6.2f}")

    for key in ("cum_successes", "rohe"):
        med = lambda art: statistics.median(getattr(art.final_records[s], key) for s in art.seeds)
        print(f"median {key}: cur {med(cur):.2f} vs random {med(rand):.2f}")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("\nmatplotlib not installed; skipping the curve plot")
        return

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    for name, art, color in (("cur", cur, "tab:blue"), ("random", rand, "tab:orange")):
        for seed in art.seeds:
            rows = read_metrics_log(art.metrics_paths[seed])
            ts = [r["t"] for r in rows]
            axes[0].plot(ts, [r["cum_successes"] for r in rows], color=color, alpha=0.6,
                         label=name if seed == art.seeds[0] else None)
            axes[1].plot(ts, [r["cum_idle_time"] for r in rows], color=color, alpha=0.6)
            axes[2].plot(ts, [r["rohe"] for r in rows], color=color, alpha=0.6)
    for ax, title in zip(axes, ("cumulative successes", "cumulative idle time",
                                "return on human effort")):
        ax.set_title(title)
        ax.set_xlabel("timestep")
    axes[0].legend()
    fig.tight_layout()
    plot_path = f"{out}/demo_curves.png"
    fig.savefig(plot_path, dpi=120)
    print(f"\nsaved learning curves to {plot_path}")


if __name__ == "__main__":
    main()
