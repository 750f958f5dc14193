"""Tabular Q-learning and Double Q-learning over a binned (p_dem, SOC) state,
with the two diagnostics used to show why the tabular route stalls: the
state-visit heatmap and the Q/reward Pearson correlation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .cycles import DutyCycle
from .errors import ConfigError, DomainError, InfeasibleStateError
from .powertrain import EnvState, PowertrainConfig, PowertrainEnv
from .rewards import RewardSpec
from .simulate import RolloutMetrics, Trajectory, rollout, trajectory_metrics

log = logging.getLogger(__name__)

SINGLE = "q"
DOUBLE = "double_q"


@dataclass(frozen=True)
class Discretization:
    """Uniform bins over p_dem and SOC; actions are the environment's power grid."""

    p_dem_bins: int = 766
    soc_bins: int = 50
    action_bins: int = 1600
    p_dem_range: tuple[float, float] = (0.0, 2.75e5)
    soc_range: tuple[float, float] = (0.3, 0.9)

    def __post_init__(self):
        if min(self.p_dem_bins, self.soc_bins, self.action_bins) < 2:
            raise ConfigError("every bin count must be >= 2")
        for lo, hi in (self.p_dem_range, self.soc_range):
            if not lo < hi:
                raise ConfigError(f"empty range [{lo}, {hi}]")

    @classmethod
    def for_config(cls, config: PowertrainConfig, **counts) -> "Discretization":
        return cls(p_dem_range=(0.0, config.p_e_max), soc_range=(config.soc_min, config.soc_max), **counts)

    @property
    def state_shape(self) -> tuple[int, int]:
        return (self.p_dem_bins, self.soc_bins)

    @property
    def n_entries(self) -> int:
        return self.p_dem_bins * self.soc_bins * self.action_bins

    @staticmethod
    def _index(v, lo, hi, n):
        width = (hi - lo) / n
        return np.clip(np.floor((np.asarray(v, dtype=float) - lo) / width), 0, n - 1).astype(np.int64)

    @staticmethod
    def _center(i, lo, hi, n):
        return lo + (np.asarray(i, dtype=float) + 0.5) * (hi - lo) / n

    def p_dem_index(self, p):
        return self._index(p, *self.p_dem_range, self.p_dem_bins)

    def soc_index(self, soc):
        return self._index(soc, *self.soc_range, self.soc_bins)

    def p_dem_center(self, i):
        return self._center(i, *self.p_dem_range, self.p_dem_bins)

    def soc_center(self, j):
        return self._center(j, *self.soc_range, self.soc_bins)

    def state_index(self, p_dem: float, soc: float) -> tuple[int, int]:
        return int(self.p_dem_index(p_dem)), int(self.soc_index(soc))


class QTable:
    """Action values over ``(p_dem_bin, soc_bin, action)``, initialised to 0.

    ``sparse=False`` allocates the full dense array (about 245 MB per table
    in float32 at the default size); ``sparse=True`` materialises a state's
    action row only when it is first written.
    """

    def __init__(self, disc: Discretization, sparse: bool = False, dtype=np.float32):
        self.disc = disc
        self.sparse = sparse
        self.dtype = np.dtype(dtype)
        self.visits = np.zeros(disc.state_shape, dtype=np.int64)
        self.reward_sum = np.zeros(disc.state_shape)
        if sparse:
            self._rows: dict[tuple[int, int], np.ndarray] = {}
            self._touched_rows: dict[tuple[int, int], np.ndarray] = {}
            self._zero = np.zeros(disc.action_bins, dtype=self.dtype)
            self._zero.flags.writeable = False
        else:
            self.values = np.zeros((*disc.state_shape, disc.action_bins), dtype=self.dtype)
            self.touched = np.zeros(self.values.shape, dtype=bool)

    @property
    def n_entries(self) -> int:
        return self.disc.n_entries

    def row(self, s: tuple[int, int]) -> np.ndarray:
        """Action values at state ``s`` (read-only view for unseen sparse rows)."""
        if self.sparse:
            return self._rows.get(s, self._zero)
        return self.values[s]

    def get(self, s: tuple[int, int], a: int) -> float:
        return float(self.row(s)[a])

    def set(self, s: tuple[int, int], a: int, value: float) -> None:
        if self.sparse:
            if s not in self._rows:
                self._rows[s] = np.zeros(self.disc.action_bins, dtype=self.dtype)
                self._touched_rows[s] = np.zeros(self.disc.action_bins, dtype=bool)
            self._rows[s][a] = value
            self._touched_rows[s][a] = True
        else:
            self.values[s][a] = value
            self.touched[s][a] = True

    def touched_row(self, s: tuple[int, int]) -> np.ndarray:
        if self.sparse:
            return self._touched_rows.get(s, np.zeros(self.disc.action_bins, dtype=bool))
        return self.touched[s]

    def record(self, s: tuple[int, int], reward: float) -> None:
        self.visits[s] += 1
        self.reward_sum[s] += reward


class TabularTransition(NamedTuple):
    state: tuple[int, int]
    action: int
    reward: float
    next_state: tuple[int, int]
    done: bool


def _argmax(q: np.ndarray, mask: np.ndarray | None) -> int:
    if mask is None:
        return int(np.argmax(q))
    if not mask.any():
        raise InfeasibleStateError("no feasible action")
    return int(np.argmax(np.where(mask, q, -np.inf)))


def epsilon_greedy(q_row, mask, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform over feasible actions with probability ``epsilon``, else the
    lowest-index feasible argmax."""
    q_row = np.asarray(q_row, dtype=float)
    mask = np.ones(len(q_row), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InfeasibleStateError("epsilon_greedy called with an empty feasibility mask")
    if rng.random() < epsilon:
        idx = np.flatnonzero(mask)
        return int(idx[rng.integers(len(idx))])
    return _argmax(q_row, mask)


def q_update(table: QTable, tr: TabularTransition, alpha: float, gamma: float,
             next_mask: np.ndarray | None = None) -> None:
    q_sa = table.get(tr.state, tr.action)
    if tr.done:
        y = tr.reward
    else:
        q2 = table.row(tr.next_state)
        y = tr.reward + gamma * float(q2[_argmax(q2, next_mask)])
    table.set(tr.state, tr.action, q_sa + alpha * (y - q_sa))
    table.record(tr.state, tr.reward)


def double_q_update(table_a: QTable, table_b: QTable, tr: TabularTransition, alpha: float,
                    gamma: float, rng: np.random.Generator, next_mask: np.ndarray | None = None,
                    coin: str | None = None) -> str:
    """Update one of the two tables chosen by a fair coin (or ``coin`` = 'A'/'B').

    The updated table selects the next action and the other one evaluates it.
    Returns the label of the table that was updated.
    """
    if coin is None:
        coin = "A" if rng.random() < 0.5 else "B"
    if coin not in ("A", "B"):
        raise DomainError(f"coin must be 'A' or 'B', got {coin!r}")
    upd, ev = (table_a, table_b) if coin == "A" else (table_b, table_a)
    q_sa = upd.get(tr.state, tr.action)
    if tr.done:
        y = tr.reward
    else:
        a_star = _argmax(upd.row(tr.next_state), next_mask)
        y = tr.reward + gamma * ev.get(tr.next_state, a_star)
    upd.set(tr.state, tr.action, q_sa + alpha * (y - q_sa))
    upd.record(tr.state, tr.reward)
    return coin


def visit_heatmap(tables: QTable | Sequence[QTable]) -> tuple[np.ndarray, float]:
    """Update counts per (p_dem_bin, soc_bin), summed over tables, and the
    fraction of state cells never updated."""
    if isinstance(tables, QTable):
        tables = [tables]
    counts = sum(t.visits for t in tables)
    return counts, float(np.mean(counts == 0))


def pearson_q_reward(samples) -> float:
    """Pearson correlation of ``(q, r)`` pairs."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise DomainError("need at least two (q, reward) pairs")
    q, r = arr[:, 0], arr[:, 1]
    dq, dr = q - q.mean(), r - r.mean()
    sq, sr = np.sqrt(np.sum(dq * dq)), np.sqrt(np.sum(dr * dr))
    if sq == 0 or sr == 0:
        raise DomainError("correlation undefined: zero variance")
    return float(np.clip(np.sum(dq * dr) / (sq * sr), -1.0, 1.0))


def q_reward_samples(tables: Sequence[QTable]) -> list[tuple[float, float]]:
    """``(max_a Q(s, a), mean immediate reward at s)`` for every visited state.

    Q is the average of the given tables and the max runs over actions that
    were updated at least once at ``s``; never-updated entries still hold the
    arbitrary initial 0.
    """
    counts, _ = visit_heatmap(tables)
    reward_sum = sum(t.reward_sum for t in tables)
    out = []
    for i, j in zip(*np.nonzero(counts)):
        s = (int(i), int(j))
        touched = np.logical_or.reduce([t.touched_row(s) for t in tables])
        q = sum(t.row(s).astype(float) for t in tables) / len(tables)
        out.append((float(q[touched].max()), float(reward_sum[s] / counts[s])))
    return out


@dataclass
class TabularConfig:
    algorithm: str = DOUBLE
    alpha: float = 0.1
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.999
    episodes: int = 1000
    seed: int = 0
    sparse: bool = False

    def __post_init__(self):
        if self.algorithm not in (SINGLE, DOUBLE):
            raise ConfigError(f"unknown tabular algorithm {self.algorithm!r}")
        if not (0 <= self.alpha <= 1 and 0 < self.gamma <= 1):
            raise ConfigError("need alpha in [0, 1] and gamma in (0, 1]")

    def epsilon(self, episode: int) -> float:
        return max(self.eps_end, self.eps_start * self.eps_decay**episode)


@dataclass
class TabularReport:
    returns: list[float] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    tables: list[QTable] = field(default_factory=list)
    heatmap: np.ndarray | None = None
    zero_visit_fraction: float = 1.0
    pearson: float = float("nan")
    trajectory: Trajectory | None = None
    metrics: RolloutMetrics | None = None
    wall_time: float = 0.0


def greedy_tabular_policy(disc: Discretization, tables: Sequence[QTable]):
    def policy(env: PowertrainEnv, state: EnvState) -> int:
        s = disc.state_index(state.p_dem, state.soc)
        q = sum(t.row(s).astype(float) for t in tables)
        return _argmax(q, env.mask(state))
    return policy


def train_tabular(config: PowertrainConfig, cycle: DutyCycle, reward: RewardSpec,
                  tcfg: TabularConfig = TabularConfig(),
                  disc: Discretization | None = None) -> TabularReport:
    t0 = time.perf_counter()
    disc = Discretization.for_config(config) if disc is None else disc
    rng = np.random.default_rng(tcfg.seed)
    env = PowertrainEnv(config, cycle, disc.action_bins)
    n_tables = 2 if tcfg.algorithm == DOUBLE else 1
    tables = [QTable(disc, sparse=tcfg.sparse) for _ in range(n_tables)]
    report = TabularReport(tables=tables)

    for ep in range(tcfg.episodes):
        eps = tcfg.epsilon(ep)
        state = env.reset()
        s = disc.state_index(state.p_dem, state.soc)
        ret = 0.0
        for _ in range(len(env)):
            q = tables[0].row(s) if n_tables == 1 else tables[0].row(s) + tables[1].row(s)
            a = epsilon_greedy(q, env.mask(state), eps, rng)
            out = env.step(state, a)
            r = reward(out.p_eng, out.efficiency, out.fuel_rate, config.t_s)
            nxt = out.next_state
            s2 = disc.state_index(nxt.p_dem, nxt.soc)
            mask2 = None if out.done else env.next_masks(np.array([nxt.p_dem]), np.array([nxt.soc]))[0]
            tr = TabularTransition(s, a, r, s2, out.done)
            if n_tables == 2:
                double_q_update(tables[0], tables[1], tr, tcfg.alpha, tcfg.gamma, rng, mask2)
            else:
                q_update(tables[0], tr, tcfg.alpha, tcfg.gamma, mask2)
            ret += r
            state, s = nxt, s2
            if out.done:
                break
        report.returns.append(ret)
        report.epsilons.append(eps)
        if (ep + 1) % 100 == 0:
            log.info("tabular episode %d  return %.4f  eps %.3f", ep + 1, ret, eps)

    report.heatmap, report.zero_visit_fraction = visit_heatmap(tables)
    samples = q_reward_samples(tables)
    try:
        report.pearson = pearson_q_reward(samples)
    except DomainError as exc:
        log.warning("Q/reward correlation unavailable: %s", exc)
    if tcfg.episodes > 0:
        report.trajectory = rollout(env, greedy_tabular_policy(disc, tables), reward)
        report.metrics = trajectory_metrics(env, report.trajectory)
    report.wall_time = time.perf_counter() - t0
    return report


def save_heatmap(counts: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_dem_bin", "soc_bin", "count"])
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                w.writerow([i, j, int(counts[i, j])])


def save_diagnostics(report: TabularReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zero_visit_fraction", "pearson_q_reward", "q_entries"])
        w.writerow([repr(report.zero_visit_fraction), repr(report.pearson),
                    report.tables[0].n_entries if report.tables else 0])
