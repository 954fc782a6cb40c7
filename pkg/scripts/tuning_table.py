"""Support recovery of TOSI penalty selection versus 10-fold cross-validation.

    python3 scripts/tuning_table.py --reps 500 --seed 0 --out tuning.json
"""

import argparse
import json
import sys

from tosi.harness import TuningStudyConfig, run_tuning_study


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--p", type=int, default=50)
    ap.add_argument("--s", type=int, default=3)
    ap.add_argument("--rho", type=float, default=2.0)
    ap.add_argument("--L", type=int, default=1)
    ap.add_argument("--rule", default="directional", choices=["directional", "first_joint"])
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--seed", type=int, action="append", help="repeatable; one row per seed")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    rows = []
    print(f"{'seed':>5} {'beta (nonzero)':>24} {'method':>9} {'NV':>6} {'IN':>6} {'CS':>6}")
    for seed in args.seed or [0]:
        cfg = TuningStudyConfig(n=args.n, p=args.p, s=args.s, rho=args.rho, L=args.L,
                                rule=args.rule, reps=args.reps, seed=seed)
        study = run_tuning_study(cfg, args.workers)
        rows.append(study)
        beta = " ".join(f"{b:.2f}" for b in study["beta"])
        for method in ("tosi", "cv_lasso"):
            m = study[method]
            print(f"{seed:5d} {beta:>24} {method:>9} {m['NV']:6.2f} {m['IN']:6.3f} {m['CS']:6.3f}")
        print(f"      status {study['status_counts']}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
