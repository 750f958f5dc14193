"""DQN / DDQN training on the powertrain environment with feasibility masks,
a hard-synchronised target network and uniform experience replay."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .cycles import DutyCycle
from .errors import ConfigError, InfeasibleStateError
from .powertrain import EnvState, PowertrainConfig, PowertrainEnv
from .replay import ReplayBuffer, Transition
from .rewards import FUEL_ONLY, RewardSpec
from .simulate import RolloutMetrics, Trajectory, rollout, trajectory_metrics

log = logging.getLogger(__name__)

DQN = "DQN"
DDQN = "DDQN"


@dataclass
class AgentConfig:
    algorithm: str = DDQN
    gamma: float = 0.99
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.999
    target_sync: int = 500
    batch_size: int = 64
    capacity: int = 200_000
    max_episodes: int = 1000
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    action_bins: int = 1600
    # multipliers applied to rewards inside TD targets, per reward kind
    reward_scale_fuel: float = 100.0
    reward_scale_shaped: float = 0.1
    conv_window: int = 200
    conv_tol: float = 0.01
    conv_windows: int = 5

    def __post_init__(self):
        if self.algorithm not in (DQN, DDQN):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not (0 < self.gamma <= 1):
            raise ConfigError("gamma must lie in (0, 1]")
        if not (0 <= self.eps_end <= self.eps_start <= 1):
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if not (0 < self.eps_decay <= 1):
            raise ConfigError("eps_decay must lie in (0, 1]")
        if self.batch_size > self.capacity:
            raise ConfigError("batch_size exceeds buffer capacity")
        if self.target_sync < 1 or self.batch_size < 1 or self.max_episodes < 0:
            raise ConfigError("target_sync, batch_size must be >= 1 and max_episodes >= 0")

    def reward_scale(self, reward: RewardSpec) -> float:
        return self.reward_scale_fuel if reward.kind == FUEL_ONLY else self.reward_scale_shaped

    def epsilon(self, episode: int) -> float:
        return max(self.eps_end, self.eps_start * self.eps_decay**episode)


@dataclass
class TrainReport:
    returns: list[float] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    loss_means: list[float] = field(default_factory=list)
    convergence_episode: int | None = None
    fuel_gal: float = float("nan")
    mean_eta: float = float("nan")
    final_soc: float = float("nan")
    band_occupancy: float = float("nan")
    wall_time: float = 0.0
    params: mlp.MlpParams | None = None
    trajectory: Trajectory | None = None
    metrics: RolloutMetrics | None = None

    @property
    def converged(self) -> bool:
        return self.convergence_episode is not None


def normalize(config: PowertrainConfig, p_dem, soc) -> np.ndarray:
    """Network input: ``[clip(p_dem / p_e_max, 0, 1), soc]`` per row."""
    p = np.clip(np.asarray(p_dem, dtype=float) / config.p_e_max, 0.0, 1.0)
    return np.stack([p, np.asarray(soc, dtype=float)], axis=-1)


def _masked(q: np.ndarray, masks: np.ndarray, dones: np.ndarray) -> np.ndarray:
    empty = ~masks.any(axis=1) & ~dones
    if empty.any():
        raise InfeasibleStateError(f"{int(empty.sum())} non-terminal next states have no feasible action")
    return np.where(masks, q, -np.inf)


def dqn_targets(rewards, dones, next_x, target_params, gamma, masks) -> np.ndarray:
    """``r + gamma * max_a' Q_target(s', a')`` over feasible ``a'``; ``r`` if terminal."""
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    masks = np.asarray(masks, dtype=bool)
    next_x = np.atleast_2d(np.asarray(next_x, dtype=float))
    q = _masked(mlp.forward_unchecked(target_params, next_x), masks, dones)
    best = q.max(axis=1)
    return rewards + gamma * np.where(dones, 0.0, best)


def ddqn_targets(rewards, dones, next_x, online_params, target_params, gamma, masks) -> np.ndarray:
    """Online net picks ``a*`` among feasible actions, target net evaluates it."""
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    masks = np.asarray(masks, dtype=bool)
    next_x = np.atleast_2d(np.asarray(next_x, dtype=float))
    q_online = _masked(mlp.forward_unchecked(online_params, next_x), masks, dones)
    a_star = np.argmax(q_online, axis=1)
    q_target = mlp.forward_unchecked(target_params, next_x)[np.arange(len(rewards)), a_star]
    return rewards + gamma * np.where(dones, 0.0, q_target)


def detect_convergence(returns, window: int = 200, tol: float = 0.01, windows: int = 5) -> int | None:
    """First episode from which the return curve has settled.

    ``R_e`` is the mean return over the ``window`` episodes ending at ``e``.
    The curve is settled at ``e`` when ``|R_e - R_{e-window}| <= tol * |R_e|``.
    Convergence is declared at the first ``e`` for which this holds at
    ``e, e + window, ..., e + (windows - 1) * window``; the returned index is
    the first episode of the earlier window, ``e - 2 * window + 1``.
    """
    r = np.asarray(returns, dtype=float)
    n = len(r)
    if window < 1 or n < 2 * window + (windows - 1) * window:
        return None
    csum = np.concatenate([[0.0], np.cumsum(r)])
    ends = np.arange(window - 1, n)
    roll = (csum[ends + 1] - csum[ends + 1 - window]) / window   # roll[i] -> R at episode i + window - 1
    ok = np.zeros(n, dtype=bool)
    e = np.arange(2 * window - 1, n)
    cur = roll[e - window + 1]
    prev = roll[e - 2 * window + 1]
    ok[e] = np.abs(cur - prev) <= tol * np.abs(cur)
    span = (windows - 1) * window
    for start in range(2 * window - 1, n - span):
        if all(ok[start + j * window] for j in range(windows)):
            return start - 2 * window + 1
    return None


def greedy_policy(params: mlp.MlpParams):
    def policy(env: PowertrainEnv, state: EnvState) -> int:
        mask = env.mask(state)
        q = mlp.forward(params, normalize(env.config, state.p_dem, state.soc))[0]
        return int(np.argmax(np.where(mask, q, -np.inf)))
    return policy


class DeepAgent:
    """Online/target network pair plus optimiser for one training run."""

    def __init__(self, env: PowertrainEnv, cfg: AgentConfig, rng: np.random.Generator,
                 reward_scale: float = 1.0):
        self.env = env
        self.cfg = cfg
        self.reward_scale = reward_scale
        sizes = [2, *cfg.hidden, env.n_actions]
        self.online = mlp.init_mlp(sizes, rng)
        self.target = mlp.init_mlp(sizes, rng)
        self.opt = mlp.adam_init(self.online, cfg.lr)
        self.grad_steps = 0

    def act(self, state: EnvState, eps: float, rng: np.random.Generator) -> int:
        mask = self.env.mask(state)
        if rng.random() < eps:
            idx = np.flatnonzero(mask)
            return int(idx[rng.integers(len(idx))])
        x = np.array([[min(max(state.p_dem / self.env.config.p_e_max, 0.0), 1.0), state.soc]])
        q = mlp.forward_unchecked(self.online, x)[0]
        return int(np.argmax(np.where(mask, q, -np.inf)))

    def learn(self, buffer: ReplayBuffer, rng: np.random.Generator) -> float:
        cfg, cf = self.cfg, self.env.config
        b = buffer.sample(cfg.batch_size, rng)
        x = normalize(cf, b.state[:, 0], b.state[:, 1])
        x2 = normalize(cf, b.next_state[:, 0], b.next_state[:, 1])
        masks = self.env.next_masks(b.next_state[:, 0], b.next_state[:, 1])
        r = self.reward_scale * b.reward
        if cfg.algorithm == DDQN:
            y = ddqn_targets(r, b.done, x2, self.online, self.target, cfg.gamma, masks)
        else:
            y = dqn_targets(r, b.done, x2, self.target, cfg.gamma, masks)
        loss, grads = mlp.loss_and_grad_unchecked(self.online, x, b.action, y)
        mlp.adam_step(self.online, grads, self.opt)
        self.grad_steps += 1
        if self.grad_steps % cfg.target_sync == 0:
            mlp.sync_params(self.online, self.target)
        return loss


def train(config: PowertrainConfig, cycle: DutyCycle, reward: RewardSpec, agent_cfg: AgentConfig,
          buffer: ReplayBuffer | None = None, rng: np.random.Generator | None = None) -> TrainReport:
    """Train for ``agent_cfg.max_episodes`` episodes then evaluate the greedy policy."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(agent_cfg.seed) if rng is None else rng
    buffer = ReplayBuffer(agent_cfg.capacity) if buffer is None else buffer
    if buffer.capacity < agent_cfg.batch_size:
        raise ConfigError("buffer capacity below batch size")
    env = PowertrainEnv(config, cycle, agent_cfg.action_bins)
    agent = DeepAgent(env, agent_cfg, rng, agent_cfg.reward_scale(reward))
    mlp.sync_params(agent.online, agent.target)
    report = TrainReport()

    for ep in range(agent_cfg.max_episodes):
        eps = agent_cfg.epsilon(ep)
        state = env.reset()
        ret = 0.0
        losses = []
        for _ in range(len(env)):
            a = agent.act(state, eps, rng)
            out = env.step(state, a)
            r = reward(out.p_eng, out.efficiency, out.fuel_rate, config.t_s)
            nxt = out.next_state
            buffer.push(Transition((state.p_dem, state.soc), a, r, (nxt.p_dem, nxt.soc), out.done))
            ret += r
            if buffer.ready(agent_cfg.batch_size):
                losses.append(agent.learn(buffer, rng))
            state = nxt
            if out.done:
                break
        report.returns.append(ret)
        report.epsilons.append(eps)
        report.loss_means.append(float(np.mean(losses)) if losses else float("nan"))
        if (ep + 1) % 100 == 0:
            log.info("episode %d  return %.3f  eps %.3f", ep + 1, ret, eps)

    report.convergence_episode = detect_convergence(
        report.returns, agent_cfg.conv_window, agent_cfg.conv_tol, agent_cfg.conv_windows)
    report.params = agent.online
    if agent_cfg.max_episodes > 0:
        evaluate_into(report, env, reward)
    report.wall_time = time.perf_counter() - t0
    return report


def evaluate_into(report: TrainReport, env: PowertrainEnv, reward: RewardSpec) -> None:
    traj = rollout(env, greedy_policy(report.params), reward)
    m = trajectory_metrics(env, traj)
    report.trajectory = traj
    report.metrics = m
    report.fuel_gal = m.fuel_gal
    report.mean_eta = m.mean_eta
    report.final_soc = m.final_soc
    report.band_occupancy = m.band_occupancy
