"""Adaptive Q-learning: optimistic Q-learning over a per-stage tree of balls.

Each stage keeps a :class:`PartitionTree`.  Balls have radius
``d_max * 2**-depth``; a ball is split into an ``r/2``-net of its domain
once its count reaches ``(d_max / r)**2`` and the children inherit its
count and estimate.  Domains and relevance are evaluated on a regular
witness grid; states are snapped to their nearest witness row for every
set-level query, while the environment itself sees the exact state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvironmentSpec, reset, step
from .errors import InvalidInput, InvariantViolation
from .metric import MetricSpec, Point, WitnessGrid, greedy_net_indices


@dataclass
class AgentConfig:
    H: int
    K: int
    delta: float = 0.05
    L: float = 1.0
    d_max: float = 1.0
    max_depth: int = 10
    witness_level: int | None = None  # default: max_depth + 1
    check_splits: bool = False  # verify packing/cover predicates of every split

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidInput("delta must lie in (0, 1)")
        if self.H < 1 or self.K < 1:
            raise InvalidInput("H and K must be at least 1")
        if self.L < 0 or self.d_max <= 0:
            raise InvalidInput("L must be >= 0 and d_max > 0")
        if self.max_depth < 0:
            raise InvalidInput("max_depth must be >= 0")
        if self.witness_level is None:
            self.witness_level = self.max_depth + 1
        if self.witness_level < self.max_depth + 1:
            raise InvalidInput("witness grid must be at least twice as fine as the smallest ball")

    @property
    def log_term(self) -> float:
        return math.log(4 * self.H * self.K / self.delta)

    @classmethod
    def for_env(cls, env: EnvironmentSpec, K: int, delta: float = 0.05, L: float | None = None,
                max_depth: int | None = None, **kw) -> "AgentConfig":
        """Config with the environment's H, L and d_max.

        ``max_depth`` defaults to the deepest level reachable in K episodes,
        ``floor(1 + log4 K)`` (a depth-D ball needs 4**(D-1) visits to its
        parent), capped at 10.
        """
        if max_depth is None:
            max_depth = min(10, reachable_depth(K))
        return cls(H=env.horizon, K=K, delta=delta, L=env.lipschitz_hint if L is None else L,
                   d_max=env.d_max, max_depth=max_depth, **kw)


def reachable_depth(K: int) -> int:
    d = 0
    while 4 ** d <= K:
        d += 1
    return d


def learning_rate(t: int, H: int) -> float:
    if t < 1:
        raise InvalidInput("learning rate is defined for t >= 1")
    return (H + 1) / (H + t)


def bonus(t: int, config: AgentConfig) -> float:
    if t < 1:
        raise InvalidInput("bonus is defined for t >= 1")
    c = config
    return 2 * math.sqrt(c.H ** 3 * c.log_term / t) + 4 * c.L * c.d_max / math.sqrt(t)


def q_update(q_old: float, t: int, reward: float, v_next: float, config: AgentConfig,
             b: float | None = None) -> float:
    """(1 - alpha_t) q_old + alpha_t (reward + b_t + v_next); ``b`` overrides b_t."""
    alpha = learning_rate(t, config.H)
    return (1 - alpha) * q_old + alpha * (reward + (bonus(t, config) if b is None else b) + v_next)


@dataclass(frozen=True)
class Ball:
    id: int
    stage: int
    center: Point
    radius: float
    q_value: float
    count: int
    depth: int
    parent: int | None
    children: tuple
    created_episode: int
    active: bool


class PartitionTree:
    """All balls ever created for one stage, plus the active set.

    ``level[i, j]`` holds the depth of the deepest active ball containing
    witness point ``(state i, action j)``; a point lies in ``dom(B)`` exactly
    when it is in ``B`` and its level equals ``depth(B)``.
    """

    def __init__(self, stage: int, metric: MetricSpec, grid: WitnessGrid, H: int,
                 max_depth: int = 10, d_max: float | None = None):
        self.stage = stage
        self.metric = metric
        self.grid = grid
        self.H = H
        self.max_depth = max_depth
        self.d_max = metric.d_max if d_max is None else d_max
        self.S, self.A = grid.states, grid.actions
        nS, nA = grid.shape
        self.level = np.zeros((nS, nA), dtype=np.int16)
        self.episode = 0
        self.version = 0
        self.children: dict[int, list[int]] = {}
        self.n = 0
        self._alloc(64)
        self._rel: list = [None] * nS
        # the root is centred on the box centre, which is a witness point
        row = grid.state_index(np.full(grid.state_dim, 0.5))
        col = grid.action_index(np.full(grid.action_dim, 0.5))
        root = self._add(row, col, depth=0, q=float(H), count=0, parent=-1)
        if not (self._ball_rows_cols(root)[0].size == nS and self._inball_block(root).all()):
            raise InvariantViolation("root ball does not cover the witness grid")
        self._refresh_active()

    # --- storage -----------------------------------------------------------

    def _alloc(self, cap: int):
        dS, dA = self.grid.state_dim, self.grid.action_dim
        old = self.n

        def grow(name, shape, dtype, fill=0):
            new = np.full(shape, fill, dtype=dtype)
            if old:
                new[:old] = getattr(self, name)[:old]
            setattr(self, name, new)

        grow("cs", (cap, dS), float)
        grow("ca", (cap, dA), float)
        grow("row", cap, np.int64)
        grow("col", cap, np.int64)
        grow("depth", cap, np.int16)
        grow("radius", cap, float)
        grow("q", cap, float)
        grow("count", cap, np.int64)
        grow("inherited", cap, np.int64)
        grow("selections", cap, np.int64)
        grow("parent", cap, np.int64, -1)
        grow("created", cap, np.int64)
        grow("active", cap, bool, False)
        self.cap = cap

    def _add(self, row, col, depth, q, count, parent) -> int:
        if self.n == self.cap:
            self._alloc(2 * self.cap)
        i = self.n
        self.cs[i] = self.S[row]
        self.ca[i] = self.A[col]
        self.row[i], self.col[i] = row, col
        self.depth[i] = depth
        self.radius[i] = self.d_max * 2.0 ** -depth
        self.q[i] = q
        self.count[i] = count
        self.inherited[i] = count
        self.parent[i] = parent
        self.created[i] = self.episode
        self.active[i] = True
        self.n += 1
        return i

    def _refresh_active(self):
        self.active_ids = np.flatnonzero(self.active[: self.n])

    def ball(self, i: int) -> Ball:
        return Ball(
            id=int(i), stage=self.stage, center=Point(self.cs[i], self.ca[i]),
            radius=float(self.radius[i]), q_value=float(self.q[i]), count=int(self.count[i]),
            depth=int(self.depth[i]), parent=None if self.parent[i] < 0 else int(self.parent[i]),
            children=tuple(self.children.get(int(i), ())), created_episode=int(self.created[i]),
            active=bool(self.active[i]),
        )

    @property
    def balls(self) -> list[Ball]:
        return [self.ball(i) for i in range(self.n)]

    # --- geometry on the witness grid --------------------------------------

    def _ball_rows_cols(self, i):
        """Witness rows and columns that can meet ball i (part norms are lower bounds)."""
        r = self.radius[i]
        rows = np.flatnonzero(self.metric.norm(self.S - self.cs[i]) < r)
        cols = np.flatnonzero(self.metric.norm(self.A - self.ca[i]) < r)
        return rows, cols

    def _inball_block(self, i, rows=None, cols=None) -> np.ndarray:
        if rows is None:
            rows, cols = self._ball_rows_cols(i)
        ds = self.metric.norm(self.S[rows] - self.cs[i])
        da = self.metric.norm(self.A[cols] - self.ca[i])
        return self.metric.combine(ds[:, None], da[None, :]) < self.radius[i]

    def _row_inball(self, row: int, ids: np.ndarray) -> np.ndarray:
        """(len(ids), nA) membership of the fiber points of ``row``."""
        ds = self.metric.norm(self.S[row] - self.cs[ids])
        da = self.metric.norm(self.A[None, :, :] - self.ca[ids][:, None, :])
        return self.metric.combine(ds[:, None], da) < self.radius[ids][:, None]

    def candidates(self, row: int) -> np.ndarray:
        """Active balls whose state extent reaches witness row ``row``."""
        ids = self.active_ids
        ds = self.metric.norm(self.S[row] - self.cs[ids])
        return ids[ds < self.radius[ids]]

    def domain_mask(self, row: int, ids: np.ndarray) -> np.ndarray:
        M = self._row_inball(row, ids)
        return M & (self.level[row][None, :] == self.depth[ids][:, None])

    def relevant_ids(self, row: int) -> np.ndarray:
        rel = self._rel[row]
        if rel is None:
            cand = self.candidates(row)
            rel = cand[self.domain_mask(row, cand).any(axis=1)]
            if rel.size == 0:
                raise InvariantViolation(f"stage {self.stage}: no relevant ball for witness row {row}")
            self._rel[row] = rel
        return rel

    def contains(self, i: int, p) -> bool:
        j = p.joint if isinstance(p, Point) else np.asarray(p, dtype=float)
        c = np.concatenate([self.cs[i], self.ca[i]])
        return bool(self.metric.norm(j - c) < self.radius[i])

    def in_domain(self, i: int, p) -> bool:
        """p in dom(B): inside B and inside no active ball of smaller radius."""
        if not self.active[i] or not self.contains(i, p):
            return False
        j = p.joint if isinstance(p, Point) else np.asarray(p, dtype=float)
        ids = self.active_ids[self.radius[self.active_ids] < self.radius[i]]
        if ids.size == 0:
            return True
        c = np.concatenate([self.cs[ids], self.ca[ids]], axis=1)
        return not bool((self.metric.norm(j - c) < self.radius[ids]).any())

    def domain_points(self, i: int) -> np.ndarray:
        """Witness points of dom(B) as (row, col) pairs."""
        if not self.active[i]:
            return np.zeros((0, 2), dtype=np.int64)
        rows, cols = self._ball_rows_cols(i)
        inb = self._inball_block(i, rows, cols) & (self.level[np.ix_(rows, cols)] == self.depth[i])
        r, c = np.nonzero(inb)
        return np.column_stack([rows[r], cols[c]])

    # --- the algorithm's choices -------------------------------------------

    def select(self, row: int) -> int:
        """Highest-Q relevant ball; ties go to the smaller radius, then lower id."""
        rel = self.relevant_ids(row)
        q = self.q[rel]
        tied = rel[q == q.max()]
        if tied.size == 1:
            return int(tied[0])
        return int(tied[np.lexsort((tied, -self.depth[tied]))][0])

    def value(self, row: int) -> float:
        rel = self.relevant_ids(row)
        return min(float(self.H), float(self.q[rel].max()))

    def action_col(self, row: int, i: int) -> int:
        """Witness action to play from ``row`` inside dom(B_i)."""
        jc = int(self.col[i])
        ds = self.metric.norm(self.S[row] - self.cs[i])
        if ds < self.radius[i] and self.level[row, jc] == self.depth[i]:
            # (x, a_center) is in B whenever the state part alone is within r
            return jc
        dom = self.domain_mask(row, np.array([i]))[0]
        cols = np.flatnonzero(dom)
        if cols.size == 0:
            raise InvariantViolation(f"ball {i} has no witness action in its domain at row {row}")
        da = self.metric.norm(self.A[cols] - self.ca[i])
        return int(cols[np.argmin(self.metric.combine(ds, da))])

    def split_threshold(self, i: int) -> float:
        return (self.d_max / self.radius[i]) ** 2

    def split(self, i: int, check: bool = False) -> list[int]:
        """Replace ball i by an r/2-net of its domain."""
        rows, cols = self._ball_rows_cols(i)
        d = int(self.depth[i])
        inb = self._inball_block(i, rows, cols) & (self.level[np.ix_(rows, cols)] == d)
        flat = np.flatnonzero(inb.ravel())
        if flat.size == 0:
            raise InvariantViolation(f"ball {i} split with an empty domain")
        rr, cc = rows[flat // len(cols)], cols[flat % len(cols)]
        pts = np.concatenate([self.S[rr], self.A[cc]], axis=1)
        half = self.radius[i] / 2
        net = greedy_net_indices(pts, half, self.metric)
        if check:
            from .metric import covers, is_packing
            if not (is_packing(pts[net], half, self.metric) and covers(pts[net], pts, half, self.metric)):
                raise InvariantViolation(f"split of ball {i} did not produce an r/2-net")
        kids = [self._add(rr[j], cc[j], d + 1, float(self.q[i]), int(self.count[i]), i) for j in net]
        self.children[i] = kids
        self.active[i] = False
        stale = [rows]
        for c in kids:
            crow, ccol = self._ball_rows_cols(c)
            blk = self.level[np.ix_(crow, ccol)]
            m = self._inball_block(c, crow, ccol)
            blk[m] = np.maximum(blk[m], d + 1)
            self.level[np.ix_(crow, ccol)] = blk
            stale.append(crow)
        for r in np.unique(np.concatenate(stale)):
            self._rel[r] = None
        self._refresh_active()
        self.version += 1
        return kids


@dataclass
class EpisodeLog:
    """Per-step records of a run, arrays indexed [episode - 1, stage - 1]."""

    K: int
    H: int
    state_dim: int = 1
    action_dim: int = 1
    splits: list = field(default_factory=list)  # (episode, stage, parent, children)

    def __post_init__(self):
        K, H = self.K, self.H
        self.ball = np.full((K, H), -1, dtype=np.int64)
        self.radius = np.zeros((K, H))
        self.t = np.zeros((K, H), dtype=np.int64)
        self.bonus = np.zeros((K, H))
        self.q_before = np.zeros((K, H))
        self.q_after = np.zeros((K, H))
        self.reward = np.zeros((K, H))
        self.v_next = np.zeros((K, H))
        self.split = np.zeros((K, H), dtype=bool)
        self.state = np.zeros((K, H, self.state_dim))
        self.action = np.zeros((K, H, self.action_dim))
        self.completed = 0

    @property
    def returns(self) -> np.ndarray:
        return self.reward[: self.completed].sum(axis=1)

    @property
    def initial_states(self) -> np.ndarray:
        return self.state[: self.completed, 0]

    def record(self, k, h, **fields):
        for name, value in fields.items():
            getattr(self, name)[k - 1, h - 1] = value

    def iter_records(self):
        """One dict per (episode, stage), JSON-ready."""
        children = {(k, h): kids for k, h, _, kids in self.splits}
        for k in range(1, self.completed + 1):
            for h in range(1, self.H + 1):
                i, j = k - 1, h - 1
                yield {
                    "episode": k, "stage": h, "ball": int(self.ball[i, j]),
                    "radius": float(self.radius[i, j]), "t": int(self.t[i, j]),
                    "bonus": float(self.bonus[i, j]), "q_before": float(self.q_before[i, j]),
                    "q_after": float(self.q_after[i, j]), "reward": float(self.reward[i, j]),
                    "v_next": float(self.v_next[i, j]),
                    "state": self.state[i, j].tolist(), "action": self.action[i, j].tolist(),
                    "split": bool(self.split[i, j]), "children": children.get((k, h), []),
                }


@dataclass
class Trajectory:
    episode: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    balls: np.ndarray


class AdaptiveQLearning:
    def __init__(self, env: EnvironmentSpec, config: AgentConfig):
        if config.H != env.horizon:
            raise InvalidInput("config.H must match the environment horizon")
        self.env = env
        self.config = config
        self.grid = WitnessGrid(config.witness_level, env.state_dim, env.action_dim)
        self.trees = [PartitionTree(h, env.metric, self.grid, config.H, config.max_depth, config.d_max)
                      for h in range(1, config.H + 1)]
        self.log = EpisodeLog(config.K, config.H, env.state_dim, env.action_dim)

    def tree(self, h: int) -> PartitionTree:
        return self.trees[h - 1]

    def maybe_split(self, h: int, i: int) -> list[int]:
        tree = self.trees[h - 1]
        if tree.depth[i] >= tree.max_depth or tree.count[i] < tree.split_threshold(i):
            return []
        return tree.split(i, check=self.config.check_splits)

    def run_episode(self, k: int, rng: np.random.Generator) -> Trajectory:
        cfg, env, grid, log = self.config, self.env, self.grid, self.log
        H = cfg.H
        for tree in self.trees:
            tree.episode = k
        x = reset(env, k)
        for h in range(1, H + 1):
            tree = self.trees[h - 1]
            row = grid.state_index(x)
            b = tree.select(row)
            a = grid.actions[tree.action_col(row, b)]
            r, x_next = step(env, h, x, a, rng)
            tree.count[b] += 1
            tree.selections[b] += 1
            t = int(tree.count[b])
            v_next = self.trees[h].value(grid.state_index(x_next)) if h < H else 0.0
            q_old = float(tree.q[b])
            bt = bonus(t, cfg)
            alpha = learning_rate(t, H)
            tree.q[b] = (1 - alpha) * q_old + alpha * (r + bt + v_next)
            kids = self.maybe_split(h, b)
            if kids:
                log.splits.append((k, h, b, kids))
            if k <= log.K:
                i, j = k - 1, h - 1
                log.ball[i, j] = b
                log.radius[i, j] = tree.radius[b]
                log.t[i, j] = t
                log.bonus[i, j] = bt
                log.q_before[i, j] = q_old
                log.q_after[i, j] = tree.q[b]
                log.reward[i, j] = r
                log.v_next[i, j] = v_next
                log.split[i, j] = bool(kids)
                log.state[i, j] = x
                log.action[i, j] = a
            x = x_next
        log.completed = max(log.completed, k)
        i = k - 1
        return Trajectory(k, log.state[i].copy(), log.action[i].copy(), log.reward[i].copy(),
                          log.ball[i].copy())

    def run(self, seed: int = 0, callback=None) -> EpisodeLog:
        """Run all K episodes; ``callback(agent, k)`` fires after each one."""
        rng = np.random.default_rng(seed)
        for k in range(1, self.config.K + 1):
            self.run_episode(k, rng)
            if callback is not None:
                callback(self, k)
        return self.log


# --- functional surface ----------------------------------------------------

def domain(ball: Ball, tree: PartitionTree):
    """Membership predicate of dom(B); empty once B has split."""
    return lambda p: tree.in_domain(ball.id, p)


def relevant(x, tree: PartitionTree) -> list[Ball]:
    return [tree.ball(i) for i in tree.relevant_ids(tree.grid.state_index(x))]


def select_ball(x, tree: PartitionTree) -> Ball:
    return tree.ball(tree.select(tree.grid.state_index(x)))


def choose_action(x, ball: Ball, tree: PartitionTree) -> np.ndarray:
    return tree.A[tree.action_col(tree.grid.state_index(x), ball.id)].copy()


def update(tree: PartitionTree, i: int, reward: float, v_next: float, config: AgentConfig) -> float:
    """Count the visit to ball i, then move its estimate toward the target."""
    tree.count[i] += 1
    tree.selections[i] += 1
    tree.q[i] = q_update(float(tree.q[i]), int(tree.count[i]), reward, v_next, config)
    return float(tree.q[i])


def estimate_value(x, tree: PartitionTree, H: int | None = None) -> float:
    v = tree.value(tree.grid.state_index(x))
    return v if H is None else min(float(H), v)
