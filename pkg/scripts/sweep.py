"""Sweep one correction or loss axis and print the paired IoU / AP75 effect.

    python scripts/sweep.py sigma_j
    python scripts/sweep.py n_j --values 1 5 10 20 --scenes 100
"""

import argparse
import dataclasses

from pseudobox.config import DEFAULT_SWEEPS
from pseudobox.simulator import SWEEP_AXES, ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("axis", choices=SWEEP_AXES)
    ap.add_argument("--values", type=float, nargs="+")
    ap.add_argument("--scenes", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--ablation", action="store_true", help="also run the student-fit loss variants")
    args = ap.parse_args()

    values = tuple(args.values or DEFAULT_SWEEPS[args.axis])
    cfg = dataclasses.replace(ExperimentConfig(), scenes=args.scenes, seed=args.seed, sweep_axis=args.axis,
                              sweep_values=values, ablation=args.ablation)
    report = run_experiment(cfg, workers=args.workers)
    print(f"{args.axis:>8}  iou_before  iou_after    gain   ap75_before  ap75_after")
    for row in report.rows:
        before, after = row["arms"]["uncorrected"], row["arms"]["corrected"]
        print(f"{row['sweep_value']:>8g}  {before['mean_iou']:10.4f}  {after['mean_iou']:9.4f}  "
              f"{row['iou_gain']:+.4f}  {before['ap75']:11.4f}  {after['ap75']:10.4f}")
        if args.ablation:
            print("          student IoU: " + ", ".join(f"{k}={v:.4f}" for k, v in row["student_iou"].items()))


if __name__ == "__main__":
    main()
