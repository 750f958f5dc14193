"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 infeasible
environment, 1 anything else raised by the package.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (compare, convergence_orderings, emit_plot_data, read_metrics,
                    run_experiment, run_single, spec_cycle, write_comparison, write_metrics)
from .config import METHODS, ExperimentSpec, load_spec
from .cycles import generate_duty_cycle, load_duty_cycle, save_duty_cycle
from .errors import ConfigError, EmsError
from .experts import dp_solve, expert_dataset
from .replay import save_transitions

log = logging.getLogger("tractor_ems")


def _spec(args, method: str | None = None) -> ExperimentSpec:
    spec = load_spec(args.config, method=method or getattr(args, "method", None))
    if getattr(args, "cycle", None):
        spec = replace(spec, cycle_path=Path(args.cycle))
    if getattr(args, "episodes", None) is not None:
        spec = replace(spec, agent=replace(spec.agent, max_episodes=args.episodes),
                       tabular=replace(spec.tabular, episodes=args.episodes))
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, seeds=(args.seed,))
    return spec


def _out(args, spec: ExperimentSpec | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if spec is not None and spec.out_dir is not None:
        return spec.out_dir
    raise ConfigError("no output directory: pass --out or set 'out' in the config")


def cmd_cycle_gen(args) -> int:
    spec = load_spec(args.config)
    seed = spec.cycle_seed if args.seed is None else args.seed
    cycle = generate_duty_cycle(spec.cycle_spec, np.random.default_rng(seed))
    out = _out(args, spec)
    save_duty_cycle(cycle, out / "cycle.csv")
    print(f"wrote {len(cycle)} samples to {out / 'cycle.csv'}")
    return 0


def cmd_dp(args) -> int:
    spec = _spec(args, method="DP")
    out = _out(args, spec)
    cycle = spec_cycle(spec)
    sol = dp_solve(spec.powertrain, cycle, spec.dp_grid)
    sol.save_csv(out / "dp_table.csv")
    run = run_single(spec, spec.seeds[0], cycle)
    write_metrics([run.report], out / "metrics.csv")
    emit_plot_data(run, out)
    r = run.report
    print(f"dp cost {sol.start_cost():.6f} kg  rollout fuel {r.fuel_gal:.6f} gal  "
          f"mean_eta {r.mean_eta:.4f}  final_soc {r.final_soc:.4f}")
    return 0


def cmd_train(args) -> int:
    spec = _spec(args)
    if spec.method in ("Conventional", "DP"):
        raise ConfigError(f"train needs a learning method, got {spec.method}")
    out = _out(args, spec)
    run = run_single(spec, spec.seeds[0])
    write_metrics([run.report], out / "metrics.csv")
    emit_plot_data(run, out)
    r = run.report
    conv = "not-converged" if r.convergence_episode is None else r.convergence_episode
    print(f"fuel_gal={r.fuel_gal:.6f} mean_eta={r.mean_eta:.4f} final_soc={r.final_soc:.4f} "
          f"convergence_episode={conv}")
    return 0


def cmd_seed_gen(args) -> int:
    spec = load_spec(args.config)
    cycles = [load_duty_cycle(p) for p in args.cycle] if args.cycle else [spec_cycle(spec)]
    socs = args.soc or [spec.powertrain.soc_init]
    grid = replace(spec.dp_grid, n_actions=spec.agent.action_bins)
    data = expert_dataset(args.expert, spec.powertrain, cycles, spec.reward_spec,
                          spec.agent.action_bins, socs, grid)
    out = _out(args, spec)
    path = out / f"seed_{args.expert}.csv"
    save_transitions(data, path)
    print(f"wrote {len(data)} {args.expert} transitions to {path}")
    return 0


def cmd_run(args) -> int:
    spec = _spec(args)
    out = _out(args, spec)
    result = run_experiment(spec, out)
    r = result.aggregate
    conv = "not-converged" if r.convergence_episode is None else r.convergence_episode
    print(f"{spec.method}: {len(result.runs)} seed(s)  fuel_gal={r.fuel_gal:.6f}  mean_eta={r.mean_eta:.4f}  "
          f"final_soc={r.final_soc:.4f}  band={r.band_occupancy:.3f}  convergence={conv}")
    return 0


def cmd_compare(args) -> int:
    reports = {}
    for d in args.runs:
        for r in read_metrics(Path(d) / "aggregate.csv"):
            reports[r.method] = r
    rows = compare(reports)
    orderings = convergence_orderings(reports)
    out = _out(args)
    write_comparison(rows, orderings, out)
    for row in rows:
        dp = "" if row.pct_of_dp is None else f"{row.pct_of_dp:.1f}% of DP"
        print(f"{row.method:24s} {row.fuel_gal:.4f} gal  {row.fc_reduction_pct:+.1f}% vs conv  {dp}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tractor-ems", description="Series-hybrid tractor energy-management bench")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    cyc = sub.add_parser("cycle", help="duty-cycle utilities")
    cyc_sub = cyc.add_subparsers(dest="cycle_command", required=True)
    gen = cyc_sub.add_parser("gen", help="synthesise a duty cycle CSV")
    gen.add_argument("--config")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out")
    gen.set_defaults(func=cmd_cycle_gen)

    dp = sub.add_parser("dp", help="solve the DP benchmark and roll it out")
    dp.add_argument("--config")
    dp.add_argument("--cycle")
    dp.add_argument("--out")
    dp.set_defaults(func=cmd_dp)

    tr = sub.add_parser("train", help="train one learning method for one seed")
    tr.add_argument("--config")
    tr.add_argument("--cycle")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--method", choices=METHODS)
    tr.add_argument("--episodes", type=int)
    tr.add_argument("--out")
    tr.set_defaults(func=cmd_train)

    sg = sub.add_parser("seed-gen", help="write expert transitions for replay preseeding")
    sg.add_argument("--config")
    sg.add_argument("--cycle", action="append", help="repeat for several cycles")
    sg.add_argument("--expert", choices=("dp", "rule"), default="dp")
    sg.add_argument("--soc", type=float, action="append", help="start SOC; repeatable")
    sg.add_argument("--out")
    sg.set_defaults(func=cmd_seed_gen)

    run = sub.add_parser("run", help="run one method over the configured seeds")
    run.add_argument("--config")
    run.add_argument("--cycle")
    run.add_argument("--seed", type=int, help="single seed instead of the configured list")
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--episodes", type=int)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="build the comparison table from run directories")
    cmp_.add_argument("runs", nargs="+", help="run output directories (each with aggregate.csv)")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EmsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
