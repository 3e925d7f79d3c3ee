"""Fixed-discretization baseline: the same optimistic update over an eps-net.

Every ball has radius ``eps`` and nothing is ever split, so domains are the
balls themselves and the relevant set of each witness row never changes.
"""
from __future__ import annotations

import math

import numpy as np

from .adaptive import AgentConfig, EpisodeLog, Trajectory, bonus, learning_rate
from .env import EnvironmentSpec, reset, step
from .errors import InvalidInput, InvariantViolation
from .metric import MetricSpec, Point, WitnessGrid, greedy_net_indices


def uniform_level(eps: float, d_max: float = 1.0) -> int:
    """Witness level whose spacing is at most eps / 2."""
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    return max(1, math.ceil(math.log2(d_max / eps) - 1e-12) + 1)


class UniformPartition:
    """One fixed ball set shared (by value) by every stage.

    ``q`` and ``count`` have shape (H, n_balls).
    """

    def __init__(self, eps: float, metric: MetricSpec, grid: WitnessGrid, H: int = 1):
        if eps <= 0:
            raise InvalidInput("eps must be positive")
        self.eps = float(eps)
        self.metric = metric
        self.grid = grid
        self.H = H
        S, A = grid.states, grid.actions
        pts = grid.joint_points()
        nA = len(A)
        # seed at the box centre (like the adaptive root), the rest in grid order
        c = grid.state_index(np.full(grid.state_dim, 0.5)) * nA + grid.action_index(np.full(grid.action_dim, 0.5))
        order = np.concatenate([[c], np.delete(np.arange(len(pts)), c)])
        net = order[greedy_net_indices(pts[order], eps, metric)]
        self.row = net // nA
        self.col = net % nA
        self.cs = S[self.row]
        self.ca = A[self.col]
        self.q = np.full((H, len(net)), float(H))
        self.count = np.zeros((H, len(net)), dtype=np.int64)
        # a fiber {x} x A meets B(c, eps) iff the state part is within eps,
        # because the centre's own action is a witness action
        ds = np.stack([metric.norm(S[i] - self.cs) for i in range(len(S))])
        self.rel = [np.flatnonzero(row < eps) for row in ds]
        for i, r in enumerate(self.rel):
            if r.size == 0:
                raise InvariantViolation(f"witness row {i} meets no ball")

    def __len__(self):
        return len(self.row)

    @property
    def centers(self) -> np.ndarray:
        return np.concatenate([self.cs, self.ca], axis=1)

    @property
    def radius(self) -> float:
        return self.eps

    def select(self, h: int, row: int) -> int:
        """Highest-Q ball meeting the fiber of ``row``; ties go to the lower id."""
        rel = self.rel[row]
        return int(rel[np.argmax(self.q[h - 1, rel])])

    def value(self, h: int, row: int) -> float:
        return min(float(self.H), float(self.q[h - 1, self.rel[row]].max()))


def build_uniform(eps: float, metric: MetricSpec, grid: WitnessGrid | None = None, H: int = 1) -> UniformPartition:
    if grid is None:
        grid = WitnessGrid(uniform_level(eps, metric.d_max), metric.state_dim, metric.action_dim)
    return UniformPartition(eps, metric, grid, H)


class UniformQLearning:
    def __init__(self, env: EnvironmentSpec, config: AgentConfig, eps: float,
                 partition: UniformPartition | None = None):
        if config.H != env.horizon:
            raise InvalidInput("config.H must match the environment horizon")
        self.env = env
        self.config = config
        self.eps = eps
        if partition is None:
            partition = build_uniform(eps, env.metric, H=config.H)
        elif partition.H != config.H or partition.eps != eps:
            raise InvalidInput("partition does not match eps / horizon")
        self.part = partition
        self.grid = partition.grid
        self.log = EpisodeLog(config.K, config.H, env.state_dim, env.action_dim)

    def run_episode(self, k: int, rng: np.random.Generator) -> Trajectory:
        cfg, env, grid, log, P = self.config, self.env, self.grid, self.log, self.part
        H = cfg.H
        x = reset(env, k)
        row = grid.state_index(x)
        for h in range(1, H + 1):
            b = P.select(h, row)
            a = P.ca[b]
            r, x_next = step(env, h, x, a, rng)
            P.count[h - 1, b] += 1
            t = int(P.count[h - 1, b])
            row_next = grid.state_index(x_next)
            v_next = P.value(h + 1, row_next) if h < H else 0.0
            q_old = float(P.q[h - 1, b])
            bt = bonus(t, cfg)
            alpha = learning_rate(t, H)
            q_new = (1 - alpha) * q_old + alpha * (r + bt + v_next)
            P.q[h - 1, b] = q_new
            i, j = k - 1, h - 1
            log.ball[i, j] = b
            log.radius[i, j] = P.eps
            log.t[i, j] = t
            log.bonus[i, j] = bt
            log.q_before[i, j] = q_old
            log.q_after[i, j] = q_new
            log.reward[i, j] = r
            log.v_next[i, j] = v_next
            log.state[i, j] = x
            log.action[i, j] = a
            x, row = x_next, row_next
        log.completed = max(log.completed, k)
        i = k - 1
        return Trajectory(k, log.state[i].copy(), log.action[i].copy(), log.reward[i].copy(),
                          log.ball[i].copy())

    def run(self, seed: int = 0, callback=None) -> EpisodeLog:
        rng = np.random.default_rng(seed)
        for k in range(1, self.config.K + 1):
            self.run_episode(k, rng)
            if callback is not None:
                callback(self, k)
        return self.log


def run_uniform(env: EnvironmentSpec, partition: UniformPartition, K: int, config: AgentConfig | None = None,
                seed: int = 0) -> EpisodeLog:
    """Run the baseline for K episodes on a fresh copy of ``partition``'s estimates."""
    if config is None:
        config = AgentConfig.for_env(env, K)
    partition.q[:] = float(config.H)
    partition.count[:] = 0
    agent = UniformQLearning(env, config, partition.eps, partition)
    return agent.run(seed)


def ball_point(partition: UniformPartition, i: int) -> Point:
    return Point(partition.cs[i], partition.ca[i])
