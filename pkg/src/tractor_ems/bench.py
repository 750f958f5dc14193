"""Experiment runner: executes one method over a list of seeds, computes the
comparison metrics and writes every artifact as CSV."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import median
from typing import Mapping, Sequence

import numpy as np

from . import mlp
from .config import (CONVENTIONAL, DDQN_FUEL, DDQN_SHAPED, DDQN_SHAPED_DP_SEED,
                     DDQN_SHAPED_MIXED_SEED, DP, DQN_FUEL, DQN_SHAPED, SEEDED, TABULAR_DQL, ExperimentSpec,
                     dump_spec)
from .cycles import DutyCycle, generate_duty_cycle, load_duty_cycle
from .deep import DDQN, DQN, TrainReport, train
from .errors import ConfigError, EmsError
from .experts import dp_policy, dp_solve, mix_and_shuffle
from .powertrain import PowertrainConfig, PowertrainEnv, kg_to_gallons
from .replay import ReplayBuffer, load_transitions, preseed
from .simulate import BAND, Trajectory, engine_only_policy, rollout, trajectory_metrics
from .tabular import TabularReport, save_diagnostics, save_heatmap, train_tabular

log = logging.getLogger(__name__)

METRIC_FIELDS = ("method", "seed", "fuel_kg", "fuel_gal", "mean_eta", "final_soc",
                 "convergence_episode", "band_occupancy", "steps", "complete", "soc_terminal")
COMPARE_FIELDS = ("method", "fuel_gal", "mean_eta", "final_soc", "convergence_episode",
                  "band_occupancy", "fc_reduction_pct", "pct_of_dp")


@dataclass(frozen=True)
class MetricsReport:
    method: str
    seed: int | None
    fuel_kg: float
    fuel_gal: float
    mean_eta: float
    final_soc: float
    convergence_episode: int | None
    band_occupancy: float
    steps: int
    complete: bool
    soc_terminal: str

    def row(self) -> list[str]:
        return [_fmt(getattr(self, f)) for f in METRIC_FIELDS]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def terminal_convention(config: PowertrainConfig) -> str:
    if config.soc_terminal is None:
        return "free"
    return f"{config.soc_terminal!r}+-{config.soc_terminal_tol!r}"


@dataclass
class RunResult:
    report: MetricsReport
    trajectory: Trajectory
    config: PowertrainConfig
    train: TrainReport | None = None
    tabular: TabularReport | None = None


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    runs: list[RunResult]
    aggregate: MetricsReport


def spec_cycle(spec: ExperimentSpec) -> DutyCycle:
    if spec.cycle_path is not None:
        return load_duty_cycle(spec.cycle_path)
    return generate_duty_cycle(spec.cycle_spec, np.random.default_rng(spec.cycle_seed))


def metrics_from(method: str, seed: int | None, env: PowertrainEnv, traj: Trajectory,
                 convergence: int | None) -> MetricsReport:
    m = trajectory_metrics(env, traj)
    return MetricsReport(method=method, seed=seed, fuel_kg=m.fuel_kg, fuel_gal=m.fuel_gal,
                         mean_eta=m.mean_eta, final_soc=m.final_soc, convergence_episode=convergence,
                         band_occupancy=m.band_occupancy, steps=m.steps,
                         complete=m.steps == len(env) and not traj.truncated,
                         soc_terminal=terminal_convention(env.config))


def seed_buffer(spec: ExperimentSpec, capacity: int, n_actions: int,
                rng: np.random.Generator) -> ReplayBuffer:
    """Replay buffer preseeded from the configured expert transition files."""
    def read(paths):
        out = []
        for p in paths:
            if not Path(p).exists():
                raise ConfigError(f"seed data {p} not found")
            out.extend(load_transitions(p))
        return out

    expert = read(spec.seed_dp)
    if spec.method == DDQN_SHAPED_MIXED_SEED:
        expert = mix_and_shuffle(expert, read(spec.seed_rule), rng)
    if not expert:
        raise ConfigError("seed data files hold no transitions")
    if max(tr.action_index for tr in expert) >= n_actions:
        raise ConfigError(f"seed data action indices exceed the {n_actions}-level action grid")
    buffer = ReplayBuffer(capacity)
    n = preseed(buffer, expert, spec.seed_fraction)
    log.info("preseeded %d expert transitions", n)
    return buffer


def run_single(spec: ExperimentSpec, seed: int, cycle: DutyCycle | None = None) -> RunResult:
    """Execute ``spec.method`` once; deterministic for a given seed."""
    cycle = spec_cycle(spec) if cycle is None else cycle
    cfg = spec.powertrain
    reward = spec.reward_spec
    method = spec.method

    if method == CONVENTIONAL:
        env = PowertrainEnv(cfg, cycle, spec.agent.action_bins)
        traj = rollout(env, engine_only_policy, reward)
        return RunResult(metrics_from(method, seed, env, traj, None), traj, cfg)

    if method == DP:
        sol = dp_solve(cfg, cycle, spec.dp_grid)
        env = PowertrainEnv(cfg, cycle, spec.dp_grid.n_actions)
        traj = rollout(env, dp_policy(sol), reward)
        return RunResult(metrics_from(method, seed, env, traj, None), traj, cfg)

    if method == TABULAR_DQL:
        tcfg = replace(spec.tabular, seed=seed)
        rep = train_tabular(cfg, cycle, reward, tcfg)
        env = PowertrainEnv(cfg, cycle, 1600)
        traj = rep.trajectory if rep.trajectory is not None else Trajectory()
        if rep.trajectory is None:
            log.warning("tabular run with zero episodes has no evaluation rollout")
        return RunResult(metrics_from(method, seed, env, traj, None), traj, cfg, tabular=rep)

    algorithm = DQN if method in (DQN_FUEL, DQN_SHAPED) else DDQN
    agent_cfg = replace(spec.agent, algorithm=algorithm, seed=seed)
    rng = np.random.default_rng(seed)
    buffer = None
    if method in SEEDED:
        agent_cfg = replace(agent_cfg, eps_start=spec.seed_eps_start,
                            eps_end=min(agent_cfg.eps_end, spec.seed_eps_start))
        buffer = seed_buffer(spec, agent_cfg.capacity, agent_cfg.action_bins, rng)
    rep = train(cfg, cycle, reward, agent_cfg, buffer=buffer, rng=rng)
    env = PowertrainEnv(cfg, cycle, agent_cfg.action_bins)
    traj = rep.trajectory if rep.trajectory is not None else Trajectory()
    return RunResult(metrics_from(method, seed, env, traj, rep.convergence_episode), traj, cfg, train=rep)


def median_convergence(episodes: Sequence[int | None]) -> int | float | None:
    """Median convergence episode; a run that never converged counts as +inf,
    so a median landing on such a run is reported as not-converged (None)."""
    if not episodes:
        return None
    m = median([np.inf if e is None else e for e in episodes])
    return None if not np.isfinite(m) else m


def aggregate(method: str, reports: Sequence[MetricsReport]) -> MetricsReport:
    """Means of fuel/efficiency/SOC/occupancy, median of convergence episodes."""
    def mean(name):
        vals = [getattr(r, name) for r in reports]
        return float(np.mean(vals))

    conv = median_convergence([r.convergence_episode for r in reports])
    return MetricsReport(method=method, seed=None, fuel_kg=mean("fuel_kg"), fuel_gal=mean("fuel_gal"),
                         mean_eta=mean("mean_eta"), final_soc=mean("final_soc"),
                         convergence_episode=conv, band_occupancy=mean("band_occupancy"),
                         steps=min(r.steps for r in reports),
                         complete=all(r.complete for r in reports),
                         soc_terminal=reports[0].soc_terminal)


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """All seeds of one method, plus artifacts under ``out_dir`` when given."""
    spec.validate()
    cycle = spec_cycle(spec)
    runs = []
    for seed in spec.seeds:
        log.info("%s seed %d", spec.method, seed)
        runs.append(run_single(spec, seed, cycle))
    agg = aggregate(spec.method, [r.report for r in runs])
    result = ExperimentResult(spec, runs, agg)
    out_dir = out_dir if out_dir is not None else spec.out_dir
    if out_dir is not None:
        write_experiment(result, out_dir)
    return result


def write_metrics(reports: Sequence[MetricsReport], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in reports:
            w.writerow(r.row())


def read_metrics(path) -> list[MetricsReport]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"metrics file {path} not found")
    out = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            def num(k, cast=float):
                return cast(row[k]) if row[k] != "" else None
            conv = row["convergence_episode"]
            out.append(MetricsReport(
                method=row["method"], seed=num("seed", int), fuel_kg=float(row["fuel_kg"]),
                fuel_gal=float(row["fuel_gal"]), mean_eta=float(row["mean_eta"]),
                final_soc=float(row["final_soc"]),
                convergence_episode=None if conv == "" else float(conv) if "." in conv else int(conv),
                band_occupancy=float(row["band_occupancy"]), steps=int(row["steps"]),
                complete=row["complete"] == "1", soc_terminal=row["soc_terminal"]))
    return out


def write_experiment(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.cfg").write_text(dump_spec(result.spec))
    for run in result.runs:
        seed_dir = out / f"seed_{run.report.seed}"
        write_metrics([run.report], seed_dir / "metrics.csv")
        emit_plot_data(run, seed_dir)
    write_metrics([r.report for r in result.runs] + [result.aggregate], out / "metrics.csv")
    write_metrics([result.aggregate], out / "aggregate.csv")
    with (out / "timing.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "wall_time_s"])
        for run in result.runs:
            src = run.train or run.tabular
            w.writerow([run.report.seed, repr(src.wall_time) if src else ""])


def emit_plot_data(run: RunResult, out_dir) -> None:
    """Reward curve, trajectory, operating points and (tabular) heatmap CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(run.trajectory, out / "trajectory.csv")
    write_operating_points(run.config, run.trajectory, out / "operating_points.csv")
    if run.train is not None:
        write_train_curve(run.train.returns, run.train.epsilons, run.train.loss_means,
                          out / "train_curve.csv")
        if run.train.params is not None:
            mlp.save_params(run.train.params, out / "params.npz")
    if run.tabular is not None:
        write_train_curve(run.tabular.returns, run.tabular.epsilons,
                          [float("nan")] * len(run.tabular.returns), out / "train_curve.csv")
        if run.tabular.heatmap is not None:
            save_heatmap(run.tabular.heatmap, out / "heatmap.csv")
        save_diagnostics(run.tabular, out / "tabular_diagnostics.csv")


def write_train_curve(returns, epsilons, losses, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "return", "epsilon", "loss_mean"])
        for i, (r, e, l) in enumerate(zip(returns, epsilons, losses)):
            w.writerow([i, repr(float(r)), repr(float(e)), repr(float(l))])


def write_trajectory(traj: Trajectory, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "p_dem_w", "p_batt_w", "p_eng_w", "soc", "next_soc", "fuel_kg", "eta", "reward"])
        for i in range(len(traj)):
            w.writerow([traj.t[i]] + [repr(float(v)) for v in (
                traj.p_dem[i], traj.p_batt[i], traj.p_eng[i], traj.soc[i], traj.next_soc[i],
                traj.fuel_kg[i], traj.eta[i], traj.reward[i])])


def write_operating_points(config: PowertrainConfig, traj: Trajectory, path) -> None:
    """Engine-on steps only, with power and efficiency normalised by the map's
    rated power and peak efficiency."""
    emap = config.engine_map
    eta_peak = float(emap.eta.max())
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "p_eng_w", "eta", "p_norm", "eta_norm", "in_band"])
        for i in range(len(traj)):
            p = float(traj.p_eng[i])
            if p <= 0:
                continue
            e = float(traj.eta[i])
            w.writerow([traj.t[i], repr(p), repr(e), repr(p / config.p_e_max), repr(e / eta_peak),
                        int(BAND[0] <= p <= BAND[1])])


def read_trajectory_fuel_gal(config: PowertrainConfig, path) -> float:
    with Path(path).open(newline="") as fh:
        total = sum(float(row["fuel_kg"]) for row in csv.DictReader(fh))
    return kg_to_gallons(config, total)


class ComparisonError(EmsError):
    exit_code = 2


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    fuel_gal: float
    mean_eta: float
    final_soc: float
    convergence_episode: int | float | None
    band_occupancy: float
    fc_reduction_pct: float
    pct_of_dp: float | None


def fc_reduction(conv_gal: float, x_gal: float) -> float:
    return 100.0 * (conv_gal - x_gal) / conv_gal


def pct_of_dp(dp_gal: float, x_gal: float) -> float:
    return 100.0 * dp_gal / x_gal


def compare(reports: Mapping[str, MetricsReport]) -> list[ComparisonRow]:
    """Comparison table against the Conventional and DP baselines.

    %-of-DP is left empty for methods evaluated under a different terminal
    SOC convention than DP.
    """
    missing = [m for m in (CONVENTIONAL, DP) if m not in reports]
    if missing:
        raise ComparisonError(f"comparison needs baseline reports for {', '.join(missing)}")
    conv, dp = reports[CONVENTIONAL], reports[DP]
    rows = []
    for method, r in reports.items():
        same = r.soc_terminal == dp.soc_terminal
        if not same:
            log.warning("%s uses terminal convention %s, DP uses %s; %%-of-DP omitted",
                        method, r.soc_terminal, dp.soc_terminal)
        rows.append(ComparisonRow(method, r.fuel_gal, r.mean_eta, r.final_soc, r.convergence_episode,
                                  r.band_occupancy, fc_reduction(conv.fuel_gal, r.fuel_gal),
                                  pct_of_dp(dp.fuel_gal, r.fuel_gal) if same else None))
    return rows


def convergence_orderings(reports: Mapping[str, MetricsReport]) -> dict[str, bool | None]:
    """Orderings between median convergence episodes; None when a side is absent.

    A non-converged median counts as +inf, but a check never holds when its
    subject (the left-hand method, or the mixed run) did not converge, so two
    non-converged runs cannot satisfy an ordering vacuously.
    """
    def conv(m):
        r = reports.get(m)
        if r is None:
            return None
        return np.inf if r.convergence_episode is None else r.convergence_episode

    def le(a, b, factor=1.0):
        ca, cb = conv(a), conv(b)
        if ca is None or cb is None:
            return None
        return bool(np.isfinite(ca) and ca <= factor * cb)

    mixed_between = None
    s, m, u = conv(DDQN_SHAPED_DP_SEED), conv(DDQN_SHAPED_MIXED_SEED), conv(DDQN_SHAPED)
    if None not in (s, m, u):
        mixed_between = bool(np.isfinite(m) and min(s, u) <= m <= max(s, u))
    # same-reward pairing; the shaped pair is preferred when both are present
    pair = (DDQN_SHAPED, DQN_SHAPED) if DQN_SHAPED in reports else (DDQN_FUEL, DQN_FUEL)
    return {
        "ddqn_le_half_dqn": le(*pair, 0.5),
        "dp_seed_le_0.85_unseeded": le(DDQN_SHAPED_DP_SEED, DDQN_SHAPED, 0.85),
        "mixed_between_dp_seed_and_unseeded": mixed_between,
    }


def write_comparison(rows: Sequence[ComparisonRow], orderings: Mapping[str, bool | None], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in COMPARE_FIELDS])
    with (out / "orderings.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "holds"])
        for k, v in orderings.items():
            w.writerow([k, "" if v is None else int(v)])
