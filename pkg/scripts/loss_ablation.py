"""Component and loss-variant ablation on synthetic scenes.

Prints the four correction arms (none, refine only, vote only, both) and the
toy student fit under each regression-loss variant.

    python scripts/loss_ablation.py --scenes 200
"""

import argparse

from pseudobox.simulator import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=20, help="student sign-gradient steps")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = ExperimentConfig(scenes=args.scenes, seed=args.seed, ablation=True, student_steps=args.steps)
    row = run_experiment(cfg, workers=args.workers).rows[0]
    print("arm            mean_iou   ap50     ap75     ap")
    for name, arm in row["arms"].items():
        print(f"{name:<14} {arm['mean_iou']:.4f}    {arm['ap50']:.4f}   {arm['ap75']:.4f}   {arm['ap']:.4f}")
    print("\nstudent variant   IoU to GT")
    for name, v in row["student_iou"].items():
        print(f"{name:<17} {v:.4f}")


if __name__ == "__main__":
    main()
