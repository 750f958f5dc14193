"""Expert controllers for replay preseeding and benchmarking: backward-induction
dynamic programming over a SOC grid and a threshold rule-based controller."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cycles import DutyCycle
from .errors import InfeasibleStateError
from .powertrain import (BOUND_TOL, SOC_TOL, EnvState, PowertrainConfig, PowertrainEnv,
                         action_bounds, bounds_array, fuel_rate_array)
from .replay import Transition
from .rewards import RewardSpec
from .simulate import Policy, Trajectory, rollout

log = logging.getLogger(__name__)

RULE_THRESHOLD_W = 1.1e5


@dataclass(frozen=True)
class DpGrid:
    """SOC x action discretisation for :func:`dp_solve`.

    ``lattice=True`` ignores ``n_soc`` and spaces SOC nodes by the SOC change
    of one action-grid quantum, anchored at ``soc_init``; every action then
    lands exactly on a node and no interpolation error arises.
    """

    n_soc: int = 200
    n_actions: int = 1600
    lattice: bool = False

    def soc_nodes(self, config: PowertrainConfig) -> np.ndarray:
        if not self.lattice:
            return np.linspace(config.soc_min, config.soc_max, self.n_soc)
        delta = (2.0 * config.p_b_max / self.n_actions) * config.t_s / config.energy
        m_lo = int(np.ceil((config.soc_min - config.soc_init) / delta - 1e-9))
        m_hi = int(np.floor((config.soc_max - config.soc_init) / delta + 1e-9))
        return config.soc_init + delta * np.arange(m_lo, m_hi + 1)


@dataclass
class DpSolution:
    """Cost-to-go (kg of fuel) and argmin action index per (time, SOC grid point).

    ``policy`` holds -1 on cells from which the terminal window is unreachable.
    """

    config: PowertrainConfig
    cycle: DutyCycle
    soc_grid: np.ndarray
    actions: np.ndarray
    cost: np.ndarray      # (T + 1, n_soc)
    policy: np.ndarray    # (T, n_soc)

    def terminal_cost(self, soc) -> np.ndarray:
        return _terminal_cost(self.config, soc)

    def cost_to_go(self, t: int, soc) -> np.ndarray:
        """V(t, soc) for arbitrary SOC: exact at t = T, interpolated otherwise."""
        if t == len(self.cycle):
            return self.terminal_cost(soc)
        return interp_cost(self.soc_grid, self.cost[t], soc)

    def start_cost(self, soc0: float | None = None) -> float:
        soc0 = self.config.soc_init if soc0 is None else soc0
        return float(self.cost_to_go(0, np.asarray([soc0]))[0])

    def save_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "soc", "cost_kg", "action_index"])
            for t in range(self.policy.shape[0]):
                for j, soc in enumerate(self.soc_grid):
                    w.writerow([t, repr(float(soc)), repr(float(self.cost[t, j])), int(self.policy[t, j])])


def _terminal_cost(config: PowertrainConfig, soc) -> np.ndarray:
    soc = np.asarray(soc, dtype=float)
    if config.soc_terminal is None:
        lo, hi = config.soc_min, config.soc_max
    else:
        lo = max(config.soc_min, config.soc_terminal - config.soc_terminal_tol)
        hi = min(config.soc_max, config.soc_terminal + config.soc_terminal_tol)
    ok = (soc >= lo - SOC_TOL) & (soc <= hi + SOC_TOL)
    return np.where(ok, 0.0, np.inf)


def interp_cost(grid: np.ndarray, values: np.ndarray, x) -> np.ndarray:
    """Linear interpolation of a cost-to-go on a uniform grid.

    Queries within 1e-9 cells of a node take the node value exactly. An
    infinite bracketing node with non-zero weight makes the result infinite,
    as do points off the grid.
    """
    x = np.asarray(x, dtype=float)
    n = len(grid)
    h = (grid[-1] - grid[0]) / (n - 1)
    pos = (x - grid[0]) / h
    near = np.round(pos)
    pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
    i = np.clip(np.floor(pos), 0, n - 2).astype(np.int64)
    w = pos - i
    v0 = values[i]
    v1 = values[i + 1]
    with np.errstate(invalid="ignore"):
        mid = (1.0 - w) * v0 + w * v1
    out = np.where(w == 0.0, v0, np.where(w == 1.0, v1, mid))
    return np.where((pos < 0) | (pos > n - 1) | np.isnan(out), np.inf, out)


def _stage(env: PowertrainEnv, t: int, socs: np.ndarray):
    """Feasibility, fuel mass and next SOC for every (soc, action) pair at step t."""
    cfg = env.config
    p_dem = env.demand[t]
    lb, ub = bounds_array(cfg, socs[:, None], p_dem, env.corridor[0][t + 1], env.corridor[1][t + 1])
    grid = env.grid
    feas = (grid >= lb - BOUND_TOL) & (grid <= ub + BOUND_TOL)
    p_eng = p_dem - grid
    p_eng = np.where(np.abs(p_eng) <= BOUND_TOL, 0.0, np.minimum(p_eng, cfg.p_e_max))
    fuel = fuel_rate_array(cfg, p_eng) * cfg.t_s
    soc2 = socs[:, None] - grid * cfg.t_s / cfg.energy
    soc2 = np.where((soc2 < cfg.soc_min) & (soc2 >= cfg.soc_min - SOC_TOL), cfg.soc_min, soc2)
    soc2 = np.where((soc2 > cfg.soc_max) & (soc2 <= cfg.soc_max + SOC_TOL), cfg.soc_max, soc2)
    return feas, fuel, soc2


def dp_solve(config: PowertrainConfig, cycle: DutyCycle, grid: DpGrid = DpGrid()) -> DpSolution:
    """Minimum-fuel backward induction over (time, SOC grid).

    Ties between equal-cost actions go to the smaller ``|p_batt|``.
    """
    env = PowertrainEnv(config, cycle, grid.n_actions)
    socs = grid.soc_nodes(config)
    n_t = len(cycle)
    # stable sort so argmin's first hit is the smallest |p_batt|
    order = np.argsort(np.abs(env.grid), kind="stable")
    cost = np.full((n_t + 1, len(socs)), np.inf)
    policy = np.full((n_t, len(socs)), -1, dtype=np.int64)
    cost[n_t] = _terminal_cost(config, socs)
    rows = np.arange(len(socs))
    for t in range(n_t - 1, -1, -1):
        feas, fuel, soc2 = _stage(env, t, socs)
        if t == n_t - 1:
            v_next = _terminal_cost(config, soc2)
        else:
            v_next = interp_cost(socs, cost[t + 1], soc2)
        total = np.where(feas, fuel + v_next, np.inf)[:, order]
        j = np.argmin(total, axis=1)
        best = total[rows, j]
        cost[t] = best
        policy[t] = np.where(np.isfinite(best), order[j], -1)
    sol = DpSolution(config, cycle, socs, env.grid, cost, policy)
    if not np.isfinite(sol.start_cost()):
        raise InfeasibleStateError(
            f"no feasible DP trajectory from soc_init={config.soc_init} on this cycle; "
            "a terminal window narrower than the SOC grid spacing needs lattice=True")
    return sol


def dp_policy(sol: DpSolution) -> Policy:
    """One-step lookahead on the DP cost-to-go, valid at off-grid SOC."""
    order = np.argsort(np.abs(sol.actions), kind="stable")

    def policy(env: PowertrainEnv, state: EnvState) -> int:
        t = state.step_index
        feas, fuel, soc2 = _stage(env, t, np.asarray([state.soc]))
        v_next = sol.cost_to_go(t + 1, soc2[0])
        total = np.where(feas[0], fuel + v_next, np.inf)[order]
        j = int(np.argmin(total))
        if not np.isfinite(total[j]):
            raise InfeasibleStateError(f"DP cost-to-go is infinite for every action at step {t}")
        return int(order[j])

    return policy


def rule_based_policy(state: EnvState, config: PowertrainConfig,
                      env: PowertrainEnv | None = None) -> float:
    """Engine alone above the threshold, battery alone otherwise.

    The choice is clamped into the admissible interval and, when ``env`` is
    given, snapped to its nearest feasible action-grid level.
    """
    p_batt = 0.0 if state.p_dem > RULE_THRESHOLD_W else state.p_dem
    lb, ub = action_bounds(config, state) if env is None else env.bounds(state)
    p_batt = min(max(p_batt, lb), ub)
    if env is not None:
        p_batt = float(env.grid[env.nearest_feasible(state, p_batt)])
    return p_batt


def rule_policy(env: PowertrainEnv, state: EnvState) -> int:
    return env.nearest_feasible(state, rule_based_policy(state, env.config, env))


def rollout_to_transitions(policy: Policy, config: PowertrainConfig, cycle: DutyCycle,
                           reward: RewardSpec, n_actions: int,
                           soc0: float | None = None) -> list[Transition]:
    if len(cycle.demand) == 0:
        return []
    env = PowertrainEnv(config, cycle, n_actions)
    traj: Trajectory = rollout(env, policy, reward, soc0)
    if traj.truncated:
        log.warning("expert rollout truncated after %d steps", len(traj))
    return traj.transitions()


def mix_and_shuffle(a: Sequence[Transition], b: Sequence[Transition],
                    rng: np.random.Generator) -> list[Transition]:
    combined = list(a) + list(b)
    return [combined[i] for i in rng.permutation(len(combined))]


def expert_dataset(kind: str, config: PowertrainConfig, cycles: Sequence[DutyCycle],
                   reward: RewardSpec, n_actions: int, socs: Sequence[float],
                   dp_grid: DpGrid | None = None) -> list[Transition]:
    """Transitions of ``kind`` ('dp' or 'rule') rolled out from every start SOC
    on every cycle, re-scored with ``reward``."""
    out: list[Transition] = []
    for cycle in cycles:
        if kind == "dp":
            sol = dp_solve(config, cycle, dp_grid or DpGrid(n_actions=n_actions))
            pol = dp_policy(sol)
        elif kind == "rule":
            pol = rule_policy
        else:
            raise ValueError(f"unknown expert kind {kind!r}")
        env = PowertrainEnv(config, cycle, n_actions)
        lo, hi = env.corridor
        for soc0 in socs:
            if not (lo[0] <= soc0 <= hi[0]):
                continue
            out.extend(rollout_to_transitions(pol, config, cycle, reward, n_actions, soc0))
    return out
