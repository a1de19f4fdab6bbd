"""Parameter sweeps: how hard-reset cost and fleet staffing move the metrics.

Sweeps the hard-reset duration and the number of humans on a small config
and prints the consolidated tables the sweep runner writes.
"""

import statistics
import tempfile

from fleetlearn import RunConfig, run_sweep


def table(axis, values, artifacts):
    print(f"\n{axis:>8} {'med successes':>14} {'med resets':>11} {'med idle':>9} {'med rohe':>9}")
    for value, art in zip(values, artifacts):
        recs = [art.final_records[s] for s in art.seeds]
        med = lambda key: statistics.median(getattr(r, key) for r in recs)
        print(f"{value:>8} {med('cum_successes'):>14} {med('cum_hard_resets'):>11} "
              f"{med('cum_idle_time'):>9} {med('rohe'):>9.2f}")


def main():
    base = RunConfig(
        n_robots=12,
        m_humans=2,
        total_steps=800,
        offline_pairs=150,
        offline_train_steps=300,
        priority="cur",
        initial_no_reset_steps=80,
        sticky_reassignment=False,
        seeds=(0, 1, 2),
        output_dir=tempfile.mkdtemp(prefix="fleetlearn-sweep-"),
    )

    print("Sweeping hard-reset duration (longer resets tie humans up, throughput falls):")
    values = [1, 5, 20]
    table("t_R", values, run_sweep(base, "t_R", values))

    print("\nSweeping the number of humans (one human drowns in resets):")
    values = [1, 4]
    table("M", values, run_sweep(base, "M", values))


if __name__ == "__main__":
    main()
