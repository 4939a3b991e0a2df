#!/usr/bin/env python3
"""Run (or summarize) the desk-scale distraction-robustness study.

Nine training runs: three seeds of the full agent on the point-mass task
with a scrolling distractor sheet, without distraction, and of the
L1-metric ablation under the same distractor.  Finished runs found under
the study root are reused, so this is safe to re-run after an
interruption, and summarizing an already-complete study is instant.

The printed table compares endpoint evaluation returns across variants
and reports how far each full-agent run's balance weight c moved from
its 0.5 initialization early in training — the sign that the agent is
actually re-weighting its reward and dynamics branches instead of
keeping the split it was born with.

A full pass from scratch is a few hours on one core.  Set AMBS_RUNS_DIR
(or --root) to place the runs; the acceptance tests read the same
location, so running this script first makes the slow half of the test
suite instant.
"""

import argparse

import numpy as np

from ambs import protocol


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default=None,
                    help="study root (default: AMBS_RUNS_DIR or runs/distraction)")
    ap.add_argument("--summary-only", action="store_true",
                    help="fail if runs are missing instead of training them")
    args = ap.parse_args()

    if args.summary_only:
        matrix = protocol.run_matrix(args.root)
        missing = [k for k, cfg in matrix.items() if not protocol.is_complete(cfg)]
        if missing:
            raise SystemExit(f"missing or stale runs: {missing}")
    else:
        protocol.ensure_runs(args.root)

    summary = protocol.load_summary(args.root)

    print("\nendpoint evaluation return (mean over 10 episodes), per seed:\n")
    print(f"{'variant':<10s}" + "".join(f"  seed {s:<6d}" for s in protocol.SEEDS)
          + "   mean")
    for variant, values in summary["returns"].items():
        cells = "".join(f"{v:12.1f}" for v in values)
        print(f"{variant:<10s}{cells}{summary['mean_returns'][variant]:7.1f}")

    none_mean = summary["mean_returns"]["none"]
    scroll_mean = summary["mean_returns"]["scroll"]
    l1_mean = summary["mean_returns"]["l1"]
    print(f"\nscroll retains {100 * scroll_mean / none_mean:.0f}% of the "
          f"undistracted return; the L1 ablation reaches "
          f"{100 * l1_mean / scroll_mean:.0f}% of the full agent under "
          f"the same distraction.")

    print("\nbalance weight c per full-agent run:\n")
    print(f"{'run':<12s}{'moved by 5k':>12s}{'final c':>10s}{'in (0,1)':>10s}")
    for name, b in summary["balance"].items():
        print(f"{name:<12s}{b['max_early_move']:12.3f}{b['final']:10.3f}"
              f"{str(b['in_open_interval']):>10s}")

    moves = np.array([b["max_early_move"] for b in summary["balance"].values()])
    print(f"\nevery run moved c by at least {moves.min():.3f} within its "
          f"first 5k frames.")


if __name__ == "__main__":
    main()
