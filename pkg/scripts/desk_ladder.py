"""Run the desk-scale method ladder and build the comparison table.

Every method runs over the seeds listed in ``configs/desk.cfg``. The
fuel-only pathology pair runs on the battery-oversized variant. Each
method gets its own subdirectory under ``--out`` and ``compare/`` holds
the final table.

    python scripts/desk_ladder.py --out results/desk
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from tractor_ems.bench import compare, convergence_orderings, run_experiment, write_comparison
from tractor_ems.config import load_spec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

LADDER = (
    ("Conventional", "desk.cfg"),
    ("DP", "desk.cfg"),
    ("DDQN_shaped", "desk.cfg"),
    ("DQN_shaped", "desk.cfg"),
    ("DDQN_shaped_dp_seed", "desk_dp_seed.cfg"),
    ("DDQN_shaped_mixed_seed", "desk_mixed_seed.cfg"),
)
OVERSIZED = (("DDQN_fuel", "desk_oversized.cfg"), ("DDQN_shaped", "desk_oversized.cfg"))


def run_ladder(out: Path, methods=None, oversized: bool = True, log=print) -> tuple[dict, dict]:
    """Run the ladder; returns ``({name: ExperimentResult}, {name: seconds})``.

    Oversized runs are keyed ``oversized/<method>``.
    """
    results, seconds = {}, {}
    jobs = [(m, c, m) for m, c in LADDER]
    if oversized:
        jobs += [(m, c, f"oversized/{m}") for m, c in OVERSIZED]
    for method, cfg, name in jobs:
        if methods and method not in methods:
            continue
        spec = load_spec(CONFIGS / cfg, method=method)
        t0 = time.perf_counter()
        results[name] = run_experiment(spec, out / name)
        seconds[name] = time.perf_counter() - t0
        agg = results[name].aggregate
        log(f"{name:30s} fuel_gal={agg.fuel_gal:.4f} eta={agg.mean_eta:.3f} band={agg.band_occupancy:.2f} "
            f"soc={agg.final_soc:.3f} conv={agg.convergence_episode} ({seconds[name]:.0f} s)")
    return results, seconds


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/desk")
    p.add_argument("--method", action="append", help="restrict to these methods; repeatable")
    p.add_argument("--no-oversized", action="store_true")
    args = p.parse_args(argv)
    out = Path(args.out)
    results, _ = run_ladder(out, args.method, not args.no_oversized)
    reports = {name: r.aggregate for name, r in results.items() if "/" not in name}
    if {"Conventional", "DP"} <= reports.keys():
        rows = compare(reports)
        orderings = convergence_orderings(reports)
        write_comparison(rows, orderings, out / "compare")
        for row in rows:
            dp = "" if row.pct_of_dp is None else f"{row.pct_of_dp:.1f}% of DP"
            print(f"{row.method:24s} {row.fuel_gal:.4f} gal  {row.fc_reduction_pct:+.1f}% vs conv  {dp}")
        for check, holds in orderings.items():
            print(f"{check}: {holds}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
