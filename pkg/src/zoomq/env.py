"""Finite-horizon environments over ``[0,1] x [0,1]`` and their grid oracles.

Rewards are deterministic.  Ground truth ``Q*``, ``V*`` and gaps are the
exact solution of the MDP discretized on a regular grid of spacing
``eps_grid``; next states are snapped to the nearest grid state.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInput, ResourceError
from .metric import MetricSpec, WitnessGrid

GOLDEN = (math.sqrt(5) - 1) / 2


# --- initial-state scripts -------------------------------------------------

@dataclass(frozen=True)
class FixedStart:
    state: tuple

    def __call__(self, k: int) -> np.ndarray:
        return np.asarray(self.state, dtype=float)


@dataclass(frozen=True)
class Sweep:
    """Linear sweep: episode 1 starts at 0, episode K at 1 (every coordinate)."""

    K: int
    dim: int = 1

    def __call__(self, k: int) -> np.ndarray:
        u = 0.0 if self.K == 1 else (k - 1) / (self.K - 1)
        return np.full(self.dim, u)


@dataclass(frozen=True)
class Listed:
    states: tuple

    def __call__(self, k: int) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.states[k - 1], dtype=float))


@dataclass
class RandomStarts:
    """Uniform starts precomputed from ``seed``; same seed, same sequence."""

    seed: int
    dim: int = 1
    _cache: np.ndarray = field(default=None, repr=False)

    def __call__(self, k: int) -> np.ndarray:
        if self._cache is None or k > len(self._cache):
            n = max(1024, 2 * k)
            self._cache = np.random.default_rng(self.seed).random((n, self.dim))
        return self._cache[k - 1].copy()


# --- transition kernels ----------------------------------------------------

@dataclass(frozen=True)
class DriftKernel:
    """``x' = clip(x + drift(h, x, a) + U(-w, w), 0, 1)``.

    ``w = 0`` gives a deterministic kernel.  Expectations for the oracle use a
    midpoint rule over the uniform noise with ``nodes`` points.
    """

    drift: Callable
    noise: float = 0.0
    nodes: int = 16

    @property
    def deterministic(self) -> bool:
        return self.noise == 0.0

    def mean_unclipped(self, h, x, a):
        return np.asarray(x, dtype=float) + self.drift(h, x, a)

    def sample(self, h, x, a, rng: np.random.Generator) -> np.ndarray:
        y = x + self.drift(h, x, a)
        if self.noise:
            y = y + rng.uniform(-self.noise, self.noise, size=np.shape(y))
        return np.minimum(np.maximum(y, 0.0), 1.0)

    def expectation_nodes(self, h, X, A):
        """Next-state nodes (..., M, d) and weights (M,)."""
        base = X + self.drift(h, X, A)
        if self.deterministic:
            return np.clip(base, 0.0, 1.0)[..., None, :], np.ones(1)
        m = self.nodes
        offs = (np.arange(m) + 0.5) / m * 2 * self.noise - self.noise
        pts = np.clip(base[..., None, :] + offs[:, None], 0.0, 1.0)
        return pts, np.full(m, 1.0 / m)


# --- environment -----------------------------------------------------------

@dataclass
class EnvironmentSpec:
    name: str
    horizon: int
    metric: MetricSpec
    reward: Callable  # reward(h, x, a), broadcasting over leading axes
    kernel: DriftKernel
    initial: Callable  # initial(k) -> state
    lipschitz_hint: float

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInput("horizon must be positive")

    @property
    def state_dim(self) -> int:
        return self.metric.state_dim

    @property
    def action_dim(self) -> int:
        return self.metric.action_dim

    @property
    def d_max(self) -> float:
        return self.metric.d_max


def reset(spec: EnvironmentSpec, k: int) -> np.ndarray:
    if k < 1:
        raise InvalidInput("episodes are numbered from 1")
    return spec.initial(k)


def _in_box(v: np.ndarray) -> bool:
    if v.size == 1:
        u = v.item()
        return 0.0 <= u <= 1.0
    return 0.0 <= v.min() and v.max() <= 1.0


def step(spec: EnvironmentSpec, h: int, x, a, rng: np.random.Generator):
    """Reward r_h(x, a) and a next state drawn with ``rng``."""
    if not 1 <= h <= spec.horizon:
        raise InvalidInput(f"stage {h} outside 1..{spec.horizon}")
    if type(x) is not np.ndarray:
        x = np.asarray(x, dtype=float)
    if type(a) is not np.ndarray:
        a = np.asarray(a, dtype=float)
    if x.shape != (spec.state_dim,) or a.shape != (spec.action_dim,):
        raise InvalidInput("state/action dimension mismatch")
    if not (_in_box(x) and _in_box(a)):
        raise InvalidInput("state or action outside the unit box")
    r = float(spec.reward(h, x, a))
    return r, spec.kernel.sample(h, x, a, rng)


# --- benchmarks ------------------------------------------------------------

def band_center(x):
    """Optimal action of the band instance, a smooth curve through the square."""
    return 0.5 + 0.15 * np.sin(2 * np.pi * np.asarray(x)[..., 0])


def _line_reward(h, x, a):
    return 1.0 - np.abs(a[..., 0] - x[..., 0])


def _band_reward(h, x, a):
    return 1.0 - np.abs(a[..., 0] - band_center(x))


def _flat_reward(h, x, a):
    return np.full(np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1]), 0.5)


def _needle_reward(h, x, a):
    r = np.maximum(0.0, 1.0 - 4.0 * np.abs(a[..., 0] - 0.7))
    return np.broadcast_to(r, np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1]))


def _stay(h, x, a):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(a)))


def _action_drift(h, x, a):
    return 0.25 * (a - 0.5)


def _const_drift(h, x, a):
    return np.full(np.broadcast_shapes(np.shape(x), np.shape(a)), 0.1)


BENCHMARKS = ("line-bandit", "band-mdp", "flat-mdp", "needle-mdp")


def make_env(name: str, horizon: int | None = None, noise: float = 0.0, initial=None,
             seed: int = 0) -> EnvironmentSpec:
    """Build a shipped benchmark.

    line-bandit  H=1, r = 1 - |a - x|; near-optimal actions form a band.
    band-mdp     r = 1 - |a - a*(x)| with a* a sine curve; action-driven drift.
    flat-mdp     constant reward and action-independent drift.
    needle-mdp   r = max(0, 1 - 4|a - 0.7|), a sharp ridge in the action.

    Every state has an action with reward 1 (0.5 for flat-mdp), so V* is
    constant across states and Q*_h = r_h + (H - h) * max reward.
    """
    metric = MetricSpec("product-max")
    init = initial if initial is not None else RandomStarts(seed)
    # under l-inf, |(a-x) - (a'-x')| <= 2 D so the line instance is 2-Lipschitz
    table = {
        "line-bandit": (1, _line_reward, DriftKernel(_stay), 2.0),
        "band-mdp": (3, _band_reward, DriftKernel(_action_drift, noise), 1.0 + 0.3 * np.pi),
        "flat-mdp": (3, _flat_reward, DriftKernel(_const_drift), 0.0),
        "needle-mdp": (2, _needle_reward, DriftKernel(_action_drift, noise), 4.0),
    }
    if name not in table:
        raise InvalidInput(f"unknown environment {name!r}; choose from {', '.join(BENCHMARKS)}")
    H, reward, kernel, L = table[name]
    return EnvironmentSpec(name, horizon or H, metric, reward, kernel, init, float(L))


# --- oracle ----------------------------------------------------------------

@dataclass
class OracleTables:
    grid: WitnessGrid
    horizon: int
    metric: MetricSpec
    Q: np.ndarray  # (H, nS, nA)
    V: np.ndarray  # (H, nS)
    gaps: np.ndarray  # (H, nS, nA)
    samples: int = 1  # expectation nodes per transition

    @property
    def eps_grid(self) -> float:
        return self.grid.spacing

    @property
    def states(self) -> np.ndarray:
        return self.grid.states

    @property
    def actions(self) -> np.ndarray:
        return self.grid.actions

    def state_rows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.grid.state_dim)
        n = self.grid.per_axis
        idx = np.clip(np.rint(X * (n - 1)), 0, n - 1).astype(np.int64)
        return np.ravel_multi_index(tuple(idx.T), (n,) * self.grid.state_dim)

    def action_cols(self, A) -> np.ndarray:
        A = np.asarray(A, dtype=float).reshape(-1, self.grid.action_dim)
        n = self.grid.per_axis
        idx = np.clip(np.rint(A * (n - 1)), 0, n - 1).astype(np.int64)
        return np.ravel_multi_index(tuple(idx.T), (n,) * self.grid.action_dim)

    def q(self, h: int, x, a) -> float:
        return float(self.Q[h - 1, self.state_rows(x)[0], self.action_cols(a)[0]])

    def v(self, h: int, x) -> float:
        return float(self.V[h - 1, self.state_rows(x)[0]])

    def to_csv(self, path) -> None:
        dS, dA = self.grid.state_dim, self.grid.action_dim
        S, A = self.grid.states, self.grid.actions
        nS, nA = len(S), len(A)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h"] + [f"x{i}" for i in range(dS)] + [f"a{i}" for i in range(dA)]
                       + ["Qstar", "Vstar", "gap"])
            for h in range(self.horizon):
                rows = np.column_stack([
                    np.full(nS * nA, h + 1),
                    np.repeat(S, nA, axis=0), np.tile(A, (nS, 1)),
                    self.Q[h].ravel(), np.repeat(self.V[h], nA), self.gaps[h].ravel(),
                ])
                w.writerows(rows.tolist())

    def to_npz(self, path) -> None:
        np.savez_compressed(path, Q=self.Q, V=self.V, gap=self.gaps,
                            states=self.grid.states, actions=self.grid.actions,
                            eps_grid=self.eps_grid)


def grid_level(eps_grid: float) -> int:
    level = round(-math.log2(eps_grid))
    if level < 1 or not math.isclose(2.0 ** -level, eps_grid):
        raise InvalidInput("eps_grid must be 2**-m for an integer m >= 1")
    return level


def build_oracle(spec: EnvironmentSpec, eps_grid: float, max_cells: int = 20_000_000) -> OracleTables:
    """Backward induction on the eps_grid discretization of ``spec``."""
    grid = WitnessGrid(grid_level(eps_grid), spec.state_dim, spec.action_dim)
    nS = grid.per_axis ** spec.state_dim
    nA = grid.per_axis ** spec.action_dim
    if spec.horizon * nS * nA > max_cells:
        raise ResourceError(f"oracle grid needs {spec.horizon * nS * nA} cells > cap {max_cells}")
    S, A = grid.states, grid.actions
    H = spec.horizon
    Q = np.empty((H, nS, nA))
    V = np.empty((H, nS))
    v_next = np.zeros(nS)
    n_nodes = 1
    for h in range(H, 0, -1):
        X = S[:, None, :]
        Aa = A[None, :, :]
        R = np.broadcast_to(spec.reward(h, X, Aa), (nS, nA))
        if h == H:
            cont = 0.0
        else:
            pts, w = spec.kernel.expectation_nodes(h, np.broadcast_to(X, (nS, nA, spec.state_dim)),
                                                   np.broadcast_to(Aa, (nS, nA, spec.action_dim)))
            n_nodes = len(w)
            n = grid.per_axis
            idx = np.clip(np.rint(pts * (n - 1)), 0, n - 1).astype(np.int64)
            rows = np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), (n,) * spec.state_dim)
            cont = (v_next[rows] * w).sum(axis=-1)
        Q[h - 1] = R + cont
        V[h - 1] = Q[h - 1].max(axis=1)
        v_next = V[h - 1]
    gaps = V[:, :, None] - Q
    return OracleTables(grid, H, spec.metric, Q, V, gaps, n_nodes)


def gap(oracle: OracleTables, h: int, x, a) -> float:
    return float(oracle.gaps[h - 1, oracle.state_rows(x)[0], oracle.action_cols(a)[0]])


@dataclass(frozen=True)
class LipschitzEstimate:
    q: float
    v: float


def estimate_lipschitz(oracle: OracleTables, random_pairs: int = 20000, seed: int = 0,
                       min_cells: int = 1) -> LipschitzEstimate:
    """Largest observed slope of Q* (joint metric) and V* (state metric).

    Pairs are every grid offset of up to ``2 * min_cells`` cells per axis
    (1-D grids) plus ``random_pairs`` uniformly drawn pairs; pairs closer
    than ``min_cells`` grid steps are skipped.  Snapping next states to the
    grid perturbs Q* by a fraction of a cell, so a larger ``min_cells``
    damps that artifact in the ratio.
    """
    m = oracle.metric
    S, A = oracle.states, oracle.actions
    nS, nA = len(S), len(A)
    s = oracle.eps_grid
    dmin = min_cells * s
    rng = np.random.default_rng(seed)
    best_q = best_v = 0.0
    span = 2 * min_cells
    for h in range(oracle.horizon):
        Qh, Vh = oracle.Q[h], oracle.V[h]
        if oracle.grid.state_dim == 1 and oracle.grid.action_dim == 1:
            for di in range(0, span + 1):
                for dj in range(-span, span + 1):
                    if di == 0 and dj <= 0:
                        continue
                    d = float(m.combine(di * s, abs(dj) * s))
                    if d < dmin or di >= nS or abs(dj) >= nA:
                        continue
                    a0, a1 = max(0, -dj), nA - max(0, dj)
                    diff = np.abs(Qh[di:, a0 + dj:a1 + dj] - Qh[:nS - di, a0:a1])
                    best_q = max(best_q, float(diff.max()) / d)
                if di and di * s >= dmin and di < nS:
                    best_v = max(best_v, float(np.abs(Vh[di:] - Vh[:-di]).max()) / (di * s))
        i = rng.integers(nS, size=(random_pairs, 2))
        j = rng.integers(nA, size=(random_pairs, 2))
        p = np.concatenate([S[i[:, 0]], A[j[:, 0]]], axis=1)
        q = np.concatenate([S[i[:, 1]], A[j[:, 1]]], axis=1)
        d = m.norm(p - q)
        ok = d >= max(dmin, 1e-300)
        if ok.any():
            best_q = max(best_q, float((np.abs(Qh[i[ok, 0], j[ok, 0]] - Qh[i[ok, 1], j[ok, 1]]) / d[ok]).max()))
        # for these Minkowski metrics the state metric is the state-part norm
        ds = m.norm(S[i[:, 0]] - S[i[:, 1]])
        ok = ds >= max(dmin, 1e-300)
        if ok.any():
            best_v = max(best_v, float((np.abs(Vh[i[ok, 0]] - Vh[i[ok, 1]]) / ds[ok]).max()))
    return LipschitzEstimate(best_q, best_v)
