"""Closed-loop rollouts of a policy over one duty cycle and the metrics
computed from the resulting trajectory."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InfeasibleStateError
from .powertrain import EnvState, PowertrainEnv, kg_to_gallons
from .replay import Transition
from .rewards import RewardSpec

log = logging.getLogger(__name__)

# maps (env, state) to an action-grid index
Policy = Callable[[PowertrainEnv, EnvState], int]

BAND = (1.1e5, 1.9e5)


@dataclass
class Trajectory:
    t: list = field(default_factory=list)
    p_dem: list = field(default_factory=list)
    p_batt: list = field(default_factory=list)
    p_eng: list = field(default_factory=list)
    soc: list = field(default_factory=list)          # SOC at the start of each step
    next_soc: list = field(default_factory=list)
    next_p_dem: list = field(default_factory=list)
    fuel_kg: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    action: list = field(default_factory=list)
    done: list = field(default_factory=list)
    truncated: bool = False

    def __len__(self):
        return len(self.t)

    @property
    def fuel_kg_total(self) -> float:
        return float(sum(self.fuel_kg))

    @property
    def final_soc(self) -> float:
        return self.next_soc[-1] if self.next_soc else float("nan")

    def transitions(self) -> list[Transition]:
        return [Transition((self.p_dem[i], self.soc[i]), self.action[i], self.reward[i],
                           (self.next_p_dem[i], self.next_soc[i]), self.done[i])
                for i in range(len(self))]


def rollout(env: PowertrainEnv, policy: Policy, reward: RewardSpec,
            soc0: float | None = None) -> Trajectory:
    """Simulate the whole cycle. An infeasible state truncates the trajectory."""
    traj = Trajectory()
    state = env.reset(soc0)
    for _ in range(len(env)):
        try:
            a = policy(env, state)
            out = env.step(state, a)
        except InfeasibleStateError as exc:
            log.warning("rollout truncated at step %d: %s", state.step_index, exc)
            traj.truncated = True
            break
        traj.t.append(state.step_index)
        traj.p_dem.append(state.p_dem)
        traj.p_batt.append(out.p_batt)
        traj.p_eng.append(out.p_eng)
        traj.soc.append(state.soc)
        traj.next_soc.append(out.next_state.soc)
        traj.next_p_dem.append(out.next_state.p_dem)
        traj.fuel_kg.append(out.fuel_mass)
        traj.eta.append(out.efficiency)
        traj.reward.append(reward(out.p_eng, out.efficiency, out.fuel_rate, env.config.t_s))
        traj.action.append(int(a))
        traj.done.append(out.done)
        state = out.next_state
        if out.done:
            break
    return traj


@dataclass(frozen=True)
class RolloutMetrics:
    fuel_kg: float
    fuel_gal: float
    mean_eta: float        # arithmetic mean over engine-on steps
    final_soc: float
    band_occupancy: float  # share of engine-on steps inside BAND
    engine_on_steps: int
    steps: int


def trajectory_metrics(env: PowertrainEnv, traj: Trajectory) -> RolloutMetrics:
    p_eng = np.asarray(traj.p_eng, dtype=float)
    on = p_eng > 0
    n_on = int(on.sum())
    eta = np.asarray(traj.eta, dtype=float)
    mean_eta = float(eta[on].mean()) if n_on else float("nan")
    in_band = (p_eng >= BAND[0]) & (p_eng <= BAND[1]) & on
    occ = float(in_band.sum() / n_on) if n_on else float("nan")
    fuel = traj.fuel_kg_total
    return RolloutMetrics(fuel_kg=fuel, fuel_gal=kg_to_gallons(env.config, fuel), mean_eta=mean_eta,
                          final_soc=traj.final_soc, band_occupancy=occ, engine_on_steps=n_on,
                          steps=len(traj))


def engine_only_policy(env: PowertrainEnv, state: EnvState) -> int:
    """Conventional tractor: the battery never moves (nearest feasible to 0 W)."""
    return env.nearest_feasible(state, 0.0)
