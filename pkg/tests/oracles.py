"""Independent reference computations shared by unit and acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np

from tractor_ems.cycles import DutyCycle
from tractor_ems.errors import InfeasibleStateError
from tractor_ems.powertrain import EnvState, PowertrainConfig, action_grid, step

SOC_EPS = 1e-9


def brute_force_fuel(config: PowertrainConfig, cycle: DutyCycle, n_actions: int) -> float:
    """Cheapest fuel mass over every action sequence, by exhaustive enumeration.

    Feasibility comes from the scalar step under the plain SOC limits; the
    terminal window is checked only at the end. Fuel is summed back to front,
    the same association order as backward induction, so the optimum is
    reproduced bit for bit.
    """
    grid = action_grid(n_actions, config.p_b_max)
    best = np.inf
    for seq in itertools.product(range(n_actions), repeat=len(cycle)):
        state = EnvState(step_index=0, soc=config.soc_init, p_dem=cycle.demand[0])
        fuel = []
        try:
            for a in seq:
                out = step(config, state, float(grid[a]), cycle)
                fuel.append(out.fuel_mass)
                state = out.next_state
        except InfeasibleStateError:
            continue
        if config.soc_terminal is not None:
            lo = max(config.soc_min, config.soc_terminal - config.soc_terminal_tol)
            hi = min(config.soc_max, config.soc_terminal + config.soc_terminal_tol)
            if not (lo - SOC_EPS <= state.soc <= hi + SOC_EPS):
                continue
        total = 0.0
        for f in reversed(fuel):
            total = f + total
        best = min(best, total)
    return best


def tiny_instance(rng: np.random.Generator):
    """Random instance whose action quanta land exactly on a <= 5 node SOC lattice.

    Returns ``(config, cycle, n_actions)`` with at most 4 steps and 7 actions.
    """
    n_actions = int(rng.integers(2, 8))
    n_steps = int(rng.integers(1, 5))
    p_b_max = 1.5e5
    quantum = 2.0 * p_b_max / n_actions
    delta = 0.05
    energy = quantum / delta          # one action quantum moves SOC by delta
    n_nodes = int(rng.integers(2, 6))
    below = int(rng.integers(0, n_nodes))
    soc_init = 0.5
    soc_min = soc_init - below * delta
    soc_max = soc_min + (n_nodes - 1) * delta
    terminal = None
    if rng.random() < 0.5:
        terminal = soc_min + int(rng.integers(0, n_nodes)) * delta
    config = PowertrainConfig(q_batt=energy / 600.0, v_oc=600.0, soc_min=soc_min, soc_max=soc_max,
                              p_b_max=p_b_max, soc_init=soc_init, soc_terminal=terminal,
                              soc_terminal_tol=1e-3)
    demand = tuple(float(x) for x in rng.uniform(0.0, 2.7e5, size=n_steps))
    return config, DutyCycle(1.0, demand), n_actions


def pearson(xs, ys) -> float:
    """Textbook sample correlation, written out term by term."""
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / (sxx * syy) ** 0.5
