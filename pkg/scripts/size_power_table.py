"""Monte Carlo size/power table for the regression, factor or mean experiment.

    python3 scripts/size_power_table.py regression --n 100 --n 200 --reps 500 --out exp1.json
    python3 scripts/size_power_table.py factor --n 200 --n 400 --sigma-sq 1 --L 1 --L 20
"""

import argparse
import json
import sys

from tosi.harness import SimConfig, run_size_power


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=["regression", "factor", "mean"])
    ap.add_argument("--n", type=int, action="append", help="sample sizes (repeatable, default 100)")
    ap.add_argument("--p", type=int)
    ap.add_argument("--s", type=int)
    ap.add_argument("--q", type=int, default=1)
    ap.add_argument("--sigma-sq", type=float, default=1.0)
    ap.add_argument("--L", type=int, action="append", help="split counts (repeatable, default 1 2 5 8)")
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", help="write all tables as one JSON list")
    args = ap.parse_args(argv)

    tables = []
    for n in args.n or [100]:
        cfg = SimConfig(args.experiment, n=n, p=args.p, s=args.s, q=args.q, sigma_sq=args.sigma_sq,
                        L_values=tuple(args.L or (1, 2, 5, 8)), reps=args.reps, seed=args.seed)
        table = run_size_power(cfg, args.workers)
        tables.append(table.to_dict())
        print(f"n={n} p={cfg.p} s={cfg.s} reps={args.reps} failed={table.failed_replicates}")
        for c in table.cells:
            label = "BY" if c.method == "BY" else f"{c.method}({c.L})"
            print(f"  {c.gset:4s} {label:10s} {c.rate:.3f}  (se {c.se:.3f})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(tables, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
