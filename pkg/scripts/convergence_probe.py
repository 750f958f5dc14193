"""Apply the convergence detector to saved training curves at several settings.

Point it at run directories produced by ``tractor-ems run``; every
``seed_*/train_curve.csv`` found is scanned. Useful for judging how much
of a convergence verdict is driven by return noise.

    python scripts/convergence_probe.py results/desk/DDQN_shaped --window 50 100
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from tractor_ems.deep import detect_convergence


def read_returns(path: Path) -> np.ndarray:
    with path.open() as fh:
        return np.array([float(row["return"]) for row in csv.DictReader(fh)])


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("runs", nargs="+")
    p.add_argument("--window", type=int, nargs="+", default=[50, 100])
    p.add_argument("--tol", type=float, nargs="+", default=[0.01, 0.02, 0.05])
    p.add_argument("--tail", type=int, default=200, help="episodes used for the late-curve statistics")
    args = p.parse_args(argv)
    for run in args.runs:
        for curve in sorted(Path(run).glob("seed_*/train_curve.csv")):
            r = read_returns(curve)
            tail = r[-args.tail:]
            cv = tail.std() / abs(tail.mean()) if tail.mean() else float("inf")
            print(f"{curve.parent}: {len(r)} episodes, late mean {tail.mean():.2f}, std {tail.std():.2f}, "
                  f"cv {cv:.3f}")
            for w in args.window:
                cells = [f"tol {t:g}: {detect_convergence(r, window=w, tol=t)}" for t in args.tol]
                print(f"    W={w:<4d} " + "  ".join(cells))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
