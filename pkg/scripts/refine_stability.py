"""Round-by-round stability of multi-round refining under the oracle head.

    python scripts/refine_stability.py --kappa 0.5 --tau 0.02 --rounds 4 --scenes 200
"""

import argparse

from pseudobox.correction import CorrectionConfig
from pseudobox.scoring import OracleParams
from pseudobox.simulator import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kappa", type=float, default=0.5)
    ap.add_argument("--tau", type=float, nargs="+", default=[0.02, 0.0])
    ap.add_argument("--rounds", type=int, default=4)
    ap.add_argument("--scenes", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    print("tau     round  D_cls mean (std)      D_loc mean (std)")
    for tau in args.tau:
        cfg = ExperimentConfig(oracle=OracleParams(kappa=args.kappa, tau=tau),
                               correction=CorrectionConfig(n_r=args.rounds), scenes=args.scenes, seed=args.seed)
        for r in run_experiment(cfg, workers=args.workers).rows[0]["stability"]:
            print(f"{tau:<7g} {r['round']:>5}  {r['d_cls_mean']:.4f} ({r['d_cls_std']:.4f})     "
                  f"{r['d_loc_mean']:.4f} ({r['d_loc_std']:.4f})")


if __name__ == "__main__":
    main()
