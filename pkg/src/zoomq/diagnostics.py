"""Empirical checks and quantities around the adaptive Q-learning analysis.

Everything here is a pure function of run artifacts (episode logs, trees)
and oracle tables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist, pdist

from .adaptive import AgentConfig, EpisodeLog, PartitionTree, bonus, learning_rate
from .env import OracleTables
from .errors import InvalidInput
from .metric import _SCIPY_NAMES, MetricSpec, packing_number


# --- learning-rate weights and surpluses -----------------------------------

def alpha_weight(t: int, i: int, H: int) -> float:
    """alpha_t^i = alpha_i * prod_{j=i+1..t} (1 - alpha_j)."""
    if not 1 <= i <= t:
        raise InvalidInput("alpha_weight needs 1 <= i <= t")
    w = learning_rate(i, H)
    for j in range(i + 1, t + 1):
        w *= 1 - learning_rate(j, H)
    return w


def alpha_weight_tail(i: int, H: int, T: int) -> np.ndarray:
    """alpha_t^i for t = i..T, by a running product."""
    if not 1 <= i <= T:
        raise InvalidInput("alpha_weight_tail needs 1 <= i <= T")
    t = np.arange(i + 1, T + 1)
    factors = 1 - (H + 1) / (H + t)
    return learning_rate(i, H) * np.concatenate([[1.0], np.cumprod(factors)])


def beta(t: int, config: AgentConfig) -> float:
    """2 * sum_{i=1..t} alpha_t^i b_i, summed term by term."""
    if t < 1:
        raise InvalidInput("beta is defined for t >= 1")
    H = config.H
    i = np.arange(1, t + 1)
    alpha = (H + 1) / (H + i)
    # prod_{j=i+1..t}(1 - alpha_j) as a reversed cumulative product
    one_minus = 1 - alpha
    tail = np.concatenate([np.cumprod(one_minus[::-1])[::-1][1:], [1.0]])
    b = np.array([bonus(int(s), config) for s in i])
    return float(2 * np.sum(alpha * tail * b))


def beta_table(T: int, config: AgentConfig) -> np.ndarray:
    """beta_0..beta_T via beta_t = (1 - alpha_t) beta_{t-1} + 2 alpha_t b_t (beta_0 = 0)."""
    out = np.zeros(T + 1)
    for t in range(1, T + 1):
        a = learning_rate(t, config.H)
        out[t] = (1 - a) * out[t - 1] + 2 * a * bonus(t, config)
    return out


def beta_bound(t, config: AgentConfig):
    c = config
    t = np.asarray(t, dtype=float)
    return 8 * np.sqrt(c.H ** 3 * c.log_term / t) + 16 * c.L * c.d_max / np.sqrt(t)


def clip(mu: float, nu: float) -> float:
    return mu if mu >= nu else 0.0


# --- near-optimal sets and dimension profiles ------------------------------

def near_optimal_constant(config: AgentConfig) -> float:
    return 2 * (config.H + 1) / config.d_max + 2 * config.L


@dataclass
class NearOptimalSet:
    stage: int
    r: float
    c1: float
    rows: np.ndarray
    cols: np.ndarray
    points: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.rows)


def _stride(oracle: OracleTables, spacing: float | None) -> int:
    if spacing is None:
        return 1
    s = max(1, int(math.floor(spacing / oracle.eps_grid + 1e-9)))
    # keep the subsample a nested dyadic grid
    return 1 << (s.bit_length() - 1)


def _sub_index(oracle: OracleTables, stride: int):
    n = oracle.grid.per_axis
    axis = np.arange(0, n, stride)
    dS, dA = oracle.grid.state_dim, oracle.grid.action_dim
    srows = np.ravel_multi_index(tuple(m.ravel() for m in np.meshgrid(*([axis] * dS), indexing="ij")), (n,) * dS)
    acols = np.ravel_multi_index(tuple(m.ravel() for m in np.meshgrid(*([axis] * dA), indexing="ij")), (n,) * dA)
    return srows, acols


def near_optimal_set(oracle: OracleTables, h: int, r: float, config: AgentConfig,
                     spacing: float | None = None) -> NearOptimalSet:
    """Oracle grid points with gap_h <= c1 * r.

    ``spacing`` subsamples the oracle grid to a nested grid no finer than
    the given step (default: the full oracle grid).
    """
    if not 0 < r <= config.d_max:
        raise InvalidInput("r must lie in (0, d_max]")
    c1 = near_optimal_constant(config)
    srows, acols = _sub_index(oracle, _stride(oracle, spacing))
    G = oracle.gaps[h - 1][np.ix_(srows, acols)]
    i, j = np.nonzero(G <= c1 * r)
    rows, cols = srows[i], acols[j]
    pts = np.concatenate([oracle.states[rows], oracle.actions[cols]], axis=1)
    return NearOptimalSet(h, r, c1, rows, cols, pts)


@dataclass
class Profile:
    kind: str
    stage: int
    scales: np.ndarray
    counts: np.ndarray
    exact: np.ndarray

    def rows(self):
        for r, n, e in zip(self.scales, self.counts, self.exact):
            yield {"kind": self.kind, "stage": self.stage, "r": float(r), "count": int(n), "exact": bool(e)}


def scales_from_exponents(exponents, d_max: float = 1.0) -> np.ndarray:
    return np.array([d_max * 2.0 ** -i for i in exponents])


def zooming_profile(oracle: OracleTables, h: int, scales, config: AgentConfig) -> Profile:
    """r-packing number of the near-optimal set at each scale r.

    Each set is sampled on the nested grid of step r/2 (or the oracle grid
    if that is coarser).
    """
    scales = np.asarray(scales, dtype=float)
    counts, exact = [], []
    for r in scales:
        P = near_optimal_set(oracle, h, r, config, spacing=r / 2)
        res = packing_number(P.points, r, oracle.metric)
        counts.append(res.value)
        exact.append(res.exact)
    return Profile("zooming", h, scales, np.array(counts), np.array(exact))


def covering_profile(oracle: OracleTables, scales) -> Profile:
    """r-packing number of the whole state-action grid at each scale."""
    scales = np.asarray(scales, dtype=float)
    counts, exact = [], []
    for r in scales:
        srows, acols = _sub_index(oracle, _stride(oracle, r / 2))
        pts = np.concatenate([np.repeat(oracle.states[srows], len(acols), axis=0),
                              np.tile(oracle.actions[acols], (len(srows), 1))], axis=1)
        res = packing_number(pts, r, oracle.metric)
        counts.append(res.value)
        exact.append(res.exact)
    return Profile("covering", 0, scales, np.array(counts), np.array(exact))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    lo: float
    hi: float
    n: int


def _loglog_fit(x, y, level: float) -> SlopeFit:
    lx, ly = np.log(x), np.log(y)
    if np.ptp(ly) == 0:
        return SlopeFit(0.0, float(ly[0]), 0.0, 0.0, 0.0, len(x))
    res = stats.linregress(lx, ly)
    q = stats.t.ppf(0.5 + level / 2, len(x) - 2) if len(x) > 2 else np.inf
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr),
                    float(res.slope - q * res.stderr), float(res.slope + q * res.stderr), len(x))


def dimension_fit(scales, counts, level: float = 0.95) -> SlopeFit:
    """Least-squares slope of log N against log(1/r) with a t interval."""
    scales = np.asarray(scales, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if len(scales) < 3 or len(scales) != len(counts):
        raise InvalidInput("dimension_fit needs at least 3 (scale, count) pairs")
    if (scales <= 0).any() or (counts <= 0).any():
        raise InvalidInput("scales and counts must be positive")
    return _loglog_fit(1 / scales, counts, level)


# --- regret ----------------------------------------------------------------

@dataclass
class RegretReport:
    K: int
    v_star: np.ndarray
    returns: np.ndarray
    eps_grid: float
    fit: SlopeFit | None

    @property
    def per_episode(self) -> np.ndarray:
        return self.v_star - self.returns

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.per_episode)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    @property
    def slope(self) -> float:
        return math.nan if self.fit is None else self.fit.slope


def checkpoints(K: int, n: int = 10) -> np.ndarray:
    lo = max(10, K // 100)
    if K <= lo:
        return np.array([K])
    return np.unique(np.geomspace(lo, K, n).astype(np.int64))


def regret_slope(episodes, regrets, level: float = 0.95) -> SlopeFit | None:
    """log-log fit of cumulative regret against episode count; None if < 3 usable points."""
    x = np.asarray(episodes, dtype=float)
    y = np.asarray(regrets, dtype=float)
    ok = y > 0
    if ok.sum() < 3:
        return None
    return _loglog_fit(x[ok], y[ok], level)


def regret(log: EpisodeLog, oracle: OracleTables) -> RegretReport:
    """Reg(K) = sum_k V*_1(x_1^k) - sum_h r_h^k with V* from the oracle grid."""
    if log.completed < log.K:
        raise InvalidInput(f"log has {log.completed} of {log.K} episodes")
    v = oracle.V[0, oracle.state_rows(log.initial_states)]
    rep = RegretReport(log.K, v, log.returns.copy(), oracle.eps_grid, None)
    ks = checkpoints(log.K)
    rep.fit = regret_slope(ks, rep.cumulative[ks - 1])
    return rep


# --- clipped surplus ledger ------------------------------------------------

@dataclass
class SurplusLedger:
    episode: np.ndarray
    stage: np.ndarray
    ball: np.ndarray
    n: np.ndarray  # count before the visit
    beta: np.ndarray
    gap: np.ndarray
    clipped: np.ndarray
    slack: float
    H: int
    per_ball: dict = field(default_factory=dict)  # (stage, ball) -> contribution
    min_gap: dict = field(default_factory=dict)
    radius: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.clipped.sum())

    def fully_clipped(self) -> list:
        return sorted(key for key, v in self.per_ball.items() if v == 0.0)

    def case_one(self, d_max: float) -> list:
        """Balls whose smallest observed gap is at least 2(H+1) r / d_max."""
        return sorted(key for key, g in self.min_gap.items()
                      if g >= 2 * (self.H + 1) * self.radius[key] / d_max)

    def records(self):
        for idx in range(len(self.episode)):
            yield {"episode": int(self.episode[idx]), "stage": int(self.stage[idx]),
                   "ball": int(self.ball[idx]), "n": int(self.n[idx]), "beta": float(self.beta[idx]),
                   "gap": float(self.gap[idx]), "clipped": float(self.clipped[idx])}


def clipped_surplus_ledger(log: EpisodeLog, oracle: OracleTables, config: AgentConfig) -> SurplusLedger:
    """clip(beta_n | gap / (H+1)) at every visited step, n the ball count before the visit."""
    K, H = log.completed, log.H
    n = (log.t[:K] - 1).ravel()
    table = beta_table(int(n.max(initial=0)), config)
    b = table[n]
    rows = oracle.state_rows(log.state[:K].reshape(-1, log.state_dim))
    cols = oracle.action_cols(log.action[:K].reshape(-1, log.action_dim))
    stage = np.tile(np.arange(1, H + 1), K)
    g = oracle.gaps[stage - 1, rows, cols]
    clipped = np.where(b >= g / (H + 1), b, 0.0)
    ball = log.ball[:K].ravel()
    led = SurplusLedger(np.repeat(np.arange(1, K + 1), H), stage, ball, n, b, g, clipped,
                        oracle.eps_grid * config.L, H)
    radius = log.radius[:K].ravel()
    for s, i, c, gg, r in zip(stage.tolist(), ball.tolist(), clipped.tolist(), g.tolist(), radius.tolist()):
        key = (s, i)
        led.per_ball[key] = led.per_ball.get(key, 0.0) + c
        led.min_gap[key] = min(led.min_gap.get(key, math.inf), gg)
        led.radius[key] = r
    return led


# --- the regret bound ------------------------------------------------------

def theorem_bound(profiles, config: AgentConfig, K: int | None = None) -> float:
    """Numeric right-hand side of the regret bound.

    ``profiles`` is one :class:`Profile` (used for every stage) or a list of
    H profiles.  r0 ranges over each profile's own scales.
    """
    c = config
    K = c.K if K is None else K
    if isinstance(profiles, Profile):
        profiles = [profiles] * c.H
    if len(profiles) != c.H:
        raise InvalidInput(f"need one profile per stage ({c.H})")
    log = math.log(4 * c.H * K / c.delta)
    total = 9 * c.H ** 2 + 18 * math.sqrt(2 * c.H ** 3 * K * log)
    factor = 288 * (math.sqrt(c.H ** 3 * log) + c.L * c.d_max)
    for prof in profiles:
        r = np.asarray(prof.scales, dtype=float)
        N = np.asarray(prof.counts, dtype=float)
        best = math.inf
        for r0 in r:
            keep = r >= r0
            best = min(best, float(np.sum(N[keep] * c.d_max / r[keep])) + K * r0 / c.d_max)
        total += factor * best
    return total


# --- invariant checks ------------------------------------------------------

@dataclass
class PartitionReport:
    covering: bool
    separation: bool
    uncovered: list = field(default_factory=list)  # (row, col) witness cells
    close_pairs: list = field(default_factory=list)  # (ball, ball, distance)

    @property
    def ok(self) -> bool:
        return self.covering and self.separation


def _covered_mask(tree: PartitionTree) -> np.ndarray:
    m = tree.metric
    S, A = tree.grid.states, tree.grid.actions
    cov = np.zeros((len(S), len(A)), dtype=bool)
    ids = np.flatnonzero(tree.active[: tree.n])
    for i in ids:
        r = tree.radius[i]
        ds = m.norm(S - tree.cs[i])
        da = m.norm(A - tree.ca[i])
        rows = np.flatnonzero(ds < r)
        cols = np.flatnonzero(da < r)
        if rows.size and cols.size:
            inside = m.combine(ds[rows][:, None], da[cols][None, :]) < r
            cov[np.ix_(rows, cols)] |= inside
    return cov


def _separation_pairs(centers: np.ndarray, r: float, spec: MetricSpec, ids: np.ndarray, limit: int):
    if len(centers) < 2:
        return []
    D = cdist(centers, centers, metric=_SCIPY_NAMES[spec.kind])
    iu, ju = np.triu_indices(len(centers), 1)
    bad = np.flatnonzero(D[iu, ju] < r)[:limit]
    return [(int(ids[iu[b]]), int(ids[ju[b]]), float(D[iu[b], ju[b]])) for b in bad]


def check_partition(tree: PartitionTree, limit: int = 20) -> PartitionReport:
    """Active balls cover the witness grid; same-radius centres are >= radius apart.

    Separation is checked over every ball ever created, split or not.
    """
    cov = _covered_mask(tree)
    missing = np.argwhere(~cov)[:limit]
    close = []
    n = tree.n
    C = np.concatenate([tree.cs[:n], tree.ca[:n]], axis=1)
    for d in np.unique(tree.depth[:n]):
        ids = np.flatnonzero(tree.depth[:n] == d)
        pts = C[ids]
        if len(ids) > 1 and pdist(pts, metric=_SCIPY_NAMES[tree.metric.kind]).min() < tree.radius[ids[0]]:
            close.extend(_separation_pairs(pts, tree.radius[ids[0]], tree.metric, ids, limit))
    return PartitionReport(bool(cov.all()), not close, [tuple(map(int, p)) for p in missing], close[:limit])


class PartitionMonitor:
    """Re-checks a tree whenever it has changed since the last look.

    Separation is checked incrementally: new balls against all earlier balls
    of the same depth.
    """

    def __init__(self, tree: PartitionTree):
        self.tree = tree
        self.version = None
        self.seen = 0
        self.checks = 0
        self.violations: list = []

    def __call__(self, episode: int) -> bool:
        t = self.tree
        if t.version == self.version:
            return True
        self.version = t.version
        self.checks += 1
        ok = True
        cov = _covered_mask(t)
        if not cov.all():
            ok = False
            self.violations.append(("covering", episode, t.stage, [tuple(map(int, p)) for p in np.argwhere(~cov)[:5]]))
        n = t.n
        if n > self.seen:
            C = np.concatenate([t.cs[:n], t.ca[:n]], axis=1)
            name = _SCIPY_NAMES[t.metric.kind]
            for d in np.unique(t.depth[self.seen:n]):
                new = np.arange(self.seen, n)[t.depth[self.seen:n] == d]
                old = np.flatnonzero(t.depth[: self.seen] == d)
                r = t.radius[new[0]]
                bad = []
                if old.size and (cdist(C[new], C[old], metric=name) < r).any():
                    bad.append("old")
                if new.size > 1 and pdist(C[new], metric=name).min() < r:
                    bad.append("new")
                if bad:
                    ok = False
                    self.violations.append(("separation", episode, t.stage, int(d)))
            self.seen = n
        return ok


@dataclass
class CountReport:
    selection_violations: list = field(default_factory=list)  # (ball, selections, bound)
    inherit_violations: list = field(default_factory=list)  # (ball, inherited, expected)
    conservation_violations: list = field(default_factory=list)
    capped: list = field(default_factory=list)  # balls at the depth cap, exempt from the selection bound
    max_ratio: float = 0.0  # largest selections / ((3/4)(d_max/r)^2)

    @property
    def ok(self) -> bool:
        return not (self.selection_violations or self.inherit_violations or self.conservation_violations)


def check_counts(tree: PartitionTree) -> CountReport:
    rep = CountReport()
    for i in range(tree.n):
        ratio = (tree.d_max / tree.radius[i]) ** 2
        sel, inh = int(tree.selections[i]), int(tree.inherited[i])
        bound = math.ceil(0.75 * ratio) + 1
        rep.max_ratio = max(rep.max_ratio, sel / (0.75 * ratio))
        if tree.depth[i] >= tree.max_depth and tree.active[i]:
            rep.capped.append(i)
        elif sel > bound:
            rep.selection_violations.append((i, sel, bound))
        if tree.parent[i] >= 0 and inh != 0.25 * ratio:
            rep.inherit_violations.append((i, inh, 0.25 * ratio))
        if tree.count[i] != inh + sel:
            rep.conservation_violations.append((i, int(tree.count[i]), inh + sel))
    return rep


@dataclass
class OptimismReport:
    violations: list  # (episode, stage, q, qstar)
    slack: float

    @property
    def ok(self) -> bool:
        return not self.violations


def check_optimism(log: EpisodeLog, oracle: OracleTables, L: float) -> OptimismReport:
    """Q of the selected ball (before its update) against Q* at the played pair."""
    K, H = log.completed, log.H
    rows = oracle.state_rows(log.state[:K].reshape(-1, log.state_dim))
    cols = oracle.action_cols(log.action[:K].reshape(-1, log.action_dim))
    stage = np.tile(np.arange(H), K)
    qstar = oracle.Q[stage, rows, cols]
    q = log.q_before[:K].ravel()
    slack = oracle.eps_grid * L
    bad = np.flatnonzero(q < qstar - slack)
    return OptimismReport([(int(b // H) + 1, int(b % H) + 1, float(q[b]), float(qstar[b])) for b in bad], slack)


def finest_ball_fraction(tree: PartitionTree, oracle: OracleTables, config: AgentConfig, depths: int = 2):
    """Share of balls at the ``depths`` smallest radii whose centre is near-optimal at its own radius."""
    n = tree.n
    present = np.unique(tree.depth[:n])[-depths:]
    ids = np.flatnonzero(np.isin(tree.depth[:n], present))
    rows = oracle.state_rows(tree.cs[ids])
    cols = oracle.action_cols(tree.ca[ids])
    g = oracle.gaps[tree.stage - 1, rows, cols]
    inside = g <= near_optimal_constant(config) * tree.radius[ids]
    return float(inside.mean()), ids, inside
