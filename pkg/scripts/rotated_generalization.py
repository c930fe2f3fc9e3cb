"""Train both models on canonical-orientation intersection scenes and report
validation error before and after rotating every test scene.

    python3 scripts/rotated_generalization.py --angle 160 --out results/generalization.csv
"""
import argparse
import csv
import json
from dataclasses import replace
from pathlib import Path

from ecco.experiments import DeskSetup, generalization


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=2000)
    ap.add_argument("--angle", type=float, default=160.0, help="test rotation in degrees")
    ap.add_argument("--iterations", type=int, default=DeskSetup.iterations)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/generalization.csv"))
    args = ap.parse_args()

    setup = replace(DeskSetup(), iterations=args.iterations)
    rows = generalization(setup, n_train=args.scenes, angle_deg=args.angle, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(json.dumps({k: r[k] for k in ("model", "params", "ade", "rot_ade", "degradation")}))


if __name__ == "__main__":
    main()
