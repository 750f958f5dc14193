"""Series-hybrid powertrain: energy balance, coulomb-counting SOC, feasible
battery-power bounds and engine fuel use.

Sign convention: ``p_batt > 0`` discharges the battery (SOC falls) and the
engine supplies ``p_eng = p_dem - p_batt``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .cycles import DutyCycle
from .errors import ConfigError, DomainError, FeasibilityError, InfeasibleStateError, ParseError

# Absolute slack (watt) when comparing a battery power against its bounds.
BOUND_TOL = 1e-6
SOC_TOL = 1e-9
LITRES_PER_GALLON = 3.78541


@dataclass(frozen=True)
class EngineMap:
    """Piecewise-linear engine power -> thermal efficiency curve."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.knots) < 2:
            raise DomainError("engine map needs at least two knots")
        p = [k[0] for k in self.knots]
        eta = [k[1] for k in self.knots]
        if p[0] <= 0:
            raise DomainError("first engine-map knot must be at positive power")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise DomainError("engine-map power knots must be strictly increasing")
        if any(not (0 < e <= 0.5) for e in eta):
            raise DomainError("engine-map efficiencies must lie in (0, 0.5]")

    @cached_property
    def power(self) -> np.ndarray:
        return np.array([k[0] for k in self.knots], dtype=float)

    @cached_property
    def eta(self) -> np.ndarray:
        return np.array([k[1] for k in self.knots], dtype=float)

    @property
    def p_max(self) -> float:
        return self.knots[-1][0]


@lru_cache(maxsize=1)
def default_engine_map() -> EngineMap:
    return load_engine_map(None)


def load_engine_map(path=None) -> EngineMap:
    """Read a ``p_eng_w,eta`` CSV; ``None`` loads the packaged default map."""
    if path is None:
        text = (resources.files("tractor_ems") / "data" / "engine_map.csv").read_text()
        name = "engine_map.csv"
    else:
        text = Path(path).read_text()
        name = str(path)
    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] != ["p_eng_w", "eta"]:
        raise ParseError(f"{name}: expected header p_eng_w,eta", row=1)
    knots = []
    for row_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            knots.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            raise ParseError(f"{name}: malformed knot", row=row_no) from None
    try:
        return EngineMap(tuple(knots))
    except DomainError as exc:
        raise ParseError(f"{name}: {exc}") from None


@dataclass(frozen=True)
class PowertrainConfig:
    q_batt: float = 1.8e5
    v_oc: float = 600.0
    soc_min: float = 0.3
    soc_max: float = 0.9
    p_b_max: float = 1.5e5
    p_e_max: float = 2.75e5
    t_s: float = 1.0
    lhv: float = 4.25e7
    fuel_density: float = 0.832
    engine_map: EngineMap = field(default_factory=default_engine_map, compare=False)
    soc_init: float = 0.8
    # None leaves the terminal SOC free; otherwise the rollout must end
    # within soc_terminal_tol of this value (charge-sustaining comparison).
    soc_terminal: float | None = None
    soc_terminal_tol: float = 1e-3

    def __post_init__(self):
        if not (0 <= self.soc_min < self.soc_max <= 1):
            raise ConfigError("need 0 <= soc_min < soc_max <= 1")
        for name in ("q_batt", "v_oc", "p_b_max", "p_e_max", "t_s", "lhv", "fuel_density"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not (self.soc_min <= self.soc_init <= self.soc_max):
            raise ConfigError("soc_init outside [soc_min, soc_max]")
        if self.soc_terminal is not None and not (self.soc_min <= self.soc_terminal <= self.soc_max):
            raise ConfigError("soc_terminal outside [soc_min, soc_max]")
        if self.soc_terminal_tol < 0:
            raise ConfigError("soc_terminal_tol must be >= 0")
        if self.engine_map.p_max < self.p_e_max:
            raise ConfigError("engine map must span [0, p_e_max]")

    @property
    def energy(self) -> float:
        """Usable battery energy per unit SOC (joule)."""
        return self.q_batt * self.v_oc


@dataclass(frozen=True, slots=True)
class EnvState:
    step_index: int
    soc: float
    p_dem: float


@dataclass(frozen=True, slots=True)
class StepOutcome:
    next_state: EnvState
    p_batt: float
    p_eng: float
    fuel_mass: float
    fuel_rate: float
    efficiency: float
    done: bool


def engine_efficiency(engine_map: EngineMap, p_eng: float) -> float:
    if not (p_eng > 0) or p_eng > engine_map.p_max + BOUND_TOL:
        raise DomainError(f"engine efficiency undefined at p_eng={p_eng}")
    return float(np.interp(p_eng, engine_map.power, engine_map.eta))


def efficiency_array(engine_map: EngineMap, p_eng: np.ndarray) -> np.ndarray:
    """Vectorised efficiency; 0 where the engine is off (p_eng <= 0)."""
    p_eng = np.asarray(p_eng, dtype=float)
    eta = np.interp(p_eng, engine_map.power, engine_map.eta)
    return np.where(p_eng > 0, eta, 0.0)


def fuel_rate(config: PowertrainConfig, p_eng: float) -> float:
    """Fuel mass flow (kg/s) for an engine output power."""
    if p_eng < 0:
        raise DomainError(f"negative engine power {p_eng}")
    if p_eng == 0:
        return 0.0
    return p_eng / (engine_efficiency(config.engine_map, p_eng) * config.lhv)


def fuel_rate_array(config: PowertrainConfig, p_eng: np.ndarray) -> np.ndarray:
    """Vectorised fuel_rate; +inf where p_eng is negative or above the map."""
    p_eng = np.asarray(p_eng, dtype=float)
    eta = np.interp(p_eng, config.engine_map.power, config.engine_map.eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(p_eng > 0, p_eng / (eta * config.lhv), 0.0)
    bad = (p_eng < 0) | (p_eng > config.engine_map.p_max + BOUND_TOL)
    return np.where(bad, np.inf, rate)


def kg_to_gallons(config: PowertrainConfig, fuel_kg: float) -> float:
    return fuel_kg / config.fuel_density / LITRES_PER_GALLON


def action_bounds(config: PowertrainConfig, state: EnvState,
                  soc_lo_next: float | None = None,
                  soc_hi_next: float | None = None) -> tuple[float, float]:
    """Admissible battery power interval ``(lb, ub)`` at ``state``.

    With the default SOC window ``[soc_min, soc_max]`` for the next state this
    is exactly the pair of lower/upper bounds on the battery power. A tighter
    window (from :func:`soc_corridor`) keeps a terminal SOC target reachable.
    """
    lo = config.soc_min if soc_lo_next is None else soc_lo_next
    hi = config.soc_max if soc_hi_next is None else soc_hi_next
    e = config.energy
    lb = max((hi - state.soc) * e / -config.t_s, -config.p_b_max, state.p_dem - config.p_e_max)
    ub = min((lo - state.soc) * e / -config.t_s, config.p_b_max, state.p_dem)
    if lb > ub + BOUND_TOL:
        raise InfeasibleStateError(
            f"empty battery-power interval at step {state.step_index}: "
            f"lb={lb:.1f} W > ub={ub:.1f} W (soc={state.soc:.4f}, p_dem={state.p_dem:.1f} W)")
    return lb, ub


def bounds_array(config: PowertrainConfig, soc: np.ndarray, p_dem: np.ndarray,
                 soc_lo_next=None, soc_hi_next=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`action_bounds` without the emptiness check."""
    lo = config.soc_min if soc_lo_next is None else soc_lo_next
    hi = config.soc_max if soc_hi_next is None else soc_hi_next
    e = config.energy
    lb = np.maximum(np.maximum((hi - soc) * e / -config.t_s, -config.p_b_max), p_dem - config.p_e_max)
    ub = np.minimum(np.minimum((lo - soc) * e / -config.t_s, config.p_b_max), p_dem)
    return lb, ub


def soc_corridor(config: PowertrainConfig, cycle: DutyCycle,
                 grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """SOC window per time index (length ``len(cycle) + 1``) from which the
    terminal target stays reachable; the plain SOC limits when it is free.

    With an action ``grid`` the per-step power extremes are rounded inward to
    grid levels, so every state inside the window has a feasible grid action.
    """
    n = len(cycle)
    lo = np.full(n + 1, config.soc_min)
    hi = np.full(n + 1, config.soc_max)
    if config.soc_terminal is None:
        return lo, hi
    lo[n] = max(config.soc_min, config.soc_terminal - config.soc_terminal_tol)
    hi[n] = min(config.soc_max, config.soc_terminal + config.soc_terminal_tol)
    e, ts = config.energy, config.t_s
    for t in range(n - 1, -1, -1):
        p_dem = cycle.demand[t]
        p_lo = max(-config.p_b_max, p_dem - config.p_e_max)
        p_hi = min(config.p_b_max, p_dem)
        if grid is not None:
            inside = grid[(grid >= p_lo - BOUND_TOL) & (grid <= p_hi + BOUND_TOL)]
            if len(inside) == 0:
                raise InfeasibleStateError(f"no action-grid level can serve step {t}")
            p_lo, p_hi = float(inside[0]), float(inside[-1])
        lo[t] = max(config.soc_min, lo[t + 1] + p_lo * ts / e)
        hi[t] = min(config.soc_max, hi[t + 1] + p_hi * ts / e)
        if lo[t] > hi[t]:
            raise InfeasibleStateError(f"terminal SOC window unreachable from step {t}")
    return lo, hi


def next_soc(config: PowertrainConfig, soc: float, p_batt: float) -> float:
    soc2 = soc - p_batt * config.t_s / config.energy
    # absorb round-off at the limits; genuine violations were rejected upstream
    if config.soc_min - SOC_TOL <= soc2 < config.soc_min:
        soc2 = config.soc_min
    elif config.soc_max < soc2 <= config.soc_max + SOC_TOL:
        soc2 = config.soc_max
    return soc2


def step(config: PowertrainConfig, state: EnvState, p_batt: float, cycle: DutyCycle,
         corridor: tuple[np.ndarray, np.ndarray] | None = None) -> StepOutcome:
    """Advance one sampling period with battery power ``p_batt``."""
    t = state.step_index
    if corridor is None:
        lb, ub = action_bounds(config, state)
    else:
        lb, ub = action_bounds(config, state, corridor[0][t + 1], corridor[1][t + 1])
    if not (lb - BOUND_TOL <= p_batt <= ub + BOUND_TOL):
        raise FeasibilityError(
            f"p_batt={p_batt:.3f} W outside [{lb:.3f}, {ub:.3f}] at step {t}")
    p_eng = state.p_dem - p_batt
    if abs(p_eng) <= BOUND_TOL:
        p_batt, p_eng = state.p_dem, 0.0
    elif p_eng > config.p_e_max:
        p_eng = config.p_e_max
        p_batt = state.p_dem - p_eng
    rate = fuel_rate(config, p_eng)
    eta = engine_efficiency(config.engine_map, p_eng) if p_eng > 0 else 0.0
    done = t + 1 >= len(cycle)
    nxt = EnvState(step_index=t + 1,
                   soc=next_soc(config, state.soc, p_batt),
                   p_dem=0.0 if done else cycle.demand[t + 1])
    return StepOutcome(next_state=nxt, p_batt=p_batt, p_eng=p_eng, fuel_mass=rate * config.t_s,
                       fuel_rate=rate, efficiency=eta, done=done)


def action_grid(n: int, p_b_max: float) -> np.ndarray:
    """``n`` battery-power levels spaced ``2 p_b_max / n`` apart.

    The grid always contains exactly 0 (so a pure-engine split is available
    at the SOC ceiling) and stays inside ``[-p_b_max, p_b_max]``.
    """
    if n < 2:
        raise DomainError("action grid needs at least 2 levels")
    step_w = 2.0 * p_b_max / n
    return (np.arange(n) - n // 2) * step_w


class PowertrainEnv:
    """A configuration, a duty cycle and a quantised action grid.

    Executed actions are masked by the terminal-aware corridor; bootstrap
    masks (:meth:`next_masks`) use the plain SOC limits since stored
    transitions carry no time index.
    """

    def __init__(self, config: PowertrainConfig, cycle: DutyCycle, n_actions: int):
        if abs(cycle.dt - config.t_s) > 1e-9 * config.t_s:
            raise ConfigError(f"cycle dt={cycle.dt} s differs from t_s={config.t_s} s")
        self.config = config
        self.cycle = cycle
        self.grid = action_grid(n_actions, config.p_b_max)
        self.corridor = soc_corridor(config, cycle, self.grid)
        self.demand = cycle.as_array()

    @property
    def n_actions(self) -> int:
        return len(self.grid)

    def __len__(self):
        return len(self.cycle)

    def reset(self, soc: float | None = None) -> EnvState:
        soc = self.config.soc_init if soc is None else soc
        lo, hi = self.corridor
        if not (lo[0] - SOC_TOL <= soc <= hi[0] + SOC_TOL):
            raise InfeasibleStateError(
                f"initial SOC {soc:.4f} cannot reach the terminal window "
                f"(admissible start range [{lo[0]:.4f}, {hi[0]:.4f}])")
        return EnvState(step_index=0, soc=soc, p_dem=self.cycle.demand[0])

    def bounds(self, state: EnvState) -> tuple[float, float]:
        t = state.step_index
        return action_bounds(self.config, state, self.corridor[0][t + 1], self.corridor[1][t + 1])

    def mask(self, state: EnvState) -> np.ndarray:
        lb, ub = self.bounds(state)
        m = (self.grid >= lb - BOUND_TOL) & (self.grid <= ub + BOUND_TOL)
        if not m.any():
            raise InfeasibleStateError(
                f"no action-grid level inside [{lb:.1f}, {ub:.1f}] W at step {state.step_index}")
        return m

    def step(self, state: EnvState, action_index: int) -> StepOutcome:
        return step(self.config, state, float(self.grid[action_index]), self.cycle, self.corridor)

    def next_masks(self, p_dem: np.ndarray, soc: np.ndarray) -> np.ndarray:
        """Feasible-action masks for a batch of states under the SOC limits."""
        lb, ub = bounds_array(self.config, np.asarray(soc)[:, None], np.asarray(p_dem)[:, None])
        return (self.grid >= lb - BOUND_TOL) & (self.grid <= ub + BOUND_TOL)

    def nearest_feasible(self, state: EnvState, p_batt: float) -> int:
        """Index of the feasible grid level closest to ``p_batt``."""
        m = self.mask(state)
        idx = np.flatnonzero(m)
        return int(idx[np.argmin(np.abs(self.grid[idx] - p_batt))])
