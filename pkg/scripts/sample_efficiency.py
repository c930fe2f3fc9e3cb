"""Validation FDE of both models as the training set grows.

    python3 scripts/sample_efficiency.py --budgets 250,500,1000,2000 --seeds 0,1,2
"""
import argparse
import csv
from dataclasses import replace
from pathlib import Path

from ecco.experiments import DeskSetup, budget_wins, sample_efficiency


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budgets", type=_ints, default=(250, 500, 1000, 2000))
    ap.add_argument("--seeds", type=_ints, default=(0, 1, 2))
    ap.add_argument("--iterations", type=int, default=DeskSetup.iterations)
    ap.add_argument("--canonical", action="store_true", help="keep every scene in its canonical orientation")
    ap.add_argument("--out", type=Path, default=Path("results/sample_efficiency.csv"))
    args = ap.parse_args()

    setup = replace(DeskSetup(), iterations=args.iterations)
    rows = sample_efficiency(setup, args.budgets, args.seeds, any_heading=not args.canonical)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"seed {r['seed']}  n={r['n_train']:<5d} {r['model']:<16s} fde {r['fde']:.3f}  ade {r['ade']:.3f}")
    for s, wins in sorted(budget_wins(rows).items()):
        print(f"seed {s}: equivariant model at or below the ablation at {wins}/{len(args.budgets)} budgets")


if __name__ == "__main__":
    main()
