"""Metric machinery over joint state-action points.

All three metric kinds are Minkowski norms of the joint coordinate vector
``(x, a)``: ``product-max`` is l-inf, ``product-sum`` is l1 and
``euclidean-joint`` is l2.  Continuous regions are stood in for by finite
witness point sets, see :class:`WitnessGrid`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InvalidInput

KINDS = {"product-max": np.inf, "product-sum": 1.0, "euclidean-joint": 2.0}
_SCIPY_NAMES = {"product-max": "chebyshev", "product-sum": "cityblock", "euclidean-joint": "euclidean"}


@dataclass(frozen=True)
class Point:
    state: np.ndarray
    action: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.state, dtype=float))
        a = np.atleast_1d(np.asarray(self.action, dtype=float))
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise InvalidInput("point coordinates must be finite")
        object.__setattr__(self, "state", s)
        object.__setattr__(self, "action", a)

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.state, self.action])


@dataclass(frozen=True)
class MetricSpec:
    """Distance on ``[0,1]^state_dim x [0,1]^action_dim``.

    ``d_max`` defaults to the diameter of the unit box under ``kind``.
    """

    kind: str = "product-max"
    d_max: float | None = None
    state_dim: int = 1
    action_dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown metric kind {self.kind!r}")
        if self.d_max is None:
            n = self.state_dim + self.action_dim
            d = {"product-max": 1.0, "product-sum": float(n), "euclidean-joint": float(np.sqrt(n))}[self.kind]
            object.__setattr__(self, "d_max", d)
        elif self.d_max <= 0:
            raise InvalidInput("d_max must be positive")

    @property
    def p(self) -> float:
        return KINDS[self.kind]

    @property
    def dim(self) -> int:
        return self.state_dim + self.action_dim

    def norm(self, diff: np.ndarray, axis=-1) -> np.ndarray:
        """Norm of coordinate differences along ``axis``."""
        diff = np.abs(diff)
        if self.kind == "product-max":
            return diff.max(axis=axis) if diff.shape[axis] else np.zeros(diff.shape[:-1])
        if self.kind == "product-sum":
            return diff.sum(axis=axis)
        return np.sqrt((diff * diff).sum(axis=axis))

    def combine(self, ds, da):
        """Joint distance from the state-part and action-part norms."""
        if self.kind == "product-max":
            return np.maximum(ds, da)
        if self.kind == "product-sum":
            return ds + da
        return np.sqrt(ds * ds + da * da)


def _joint(p, spec: MetricSpec) -> np.ndarray:
    arr = p.joint if isinstance(p, Point) else np.atleast_1d(np.asarray(p, dtype=float))
    if arr.shape[-1] != spec.dim:
        raise InvalidInput(f"point has {arr.shape[-1]} coordinates, metric expects {spec.dim}")
    return arr


def distance(p, q, spec: MetricSpec) -> float:
    a, b = _joint(p, spec), _joint(q, spec)
    return float(spec.norm(a - b))


def pairwise(X, Y, spec: MetricSpec) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != spec.dim or Y.shape[1] != spec.dim:
        raise InvalidInput("dimension mismatch in pairwise distance")
    return cdist(X, Y, metric=_SCIPY_NAMES[spec.kind])


def state_distance(x, x2, spec: MetricSpec, actions) -> float:
    """min over sampled action pairs of D((x,a),(x',a'))."""
    actions = np.asarray(actions, dtype=float).reshape(-1, spec.action_dim)
    if len(actions) == 0:
        raise InvalidInput("state_distance needs a non-empty action sample")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != (spec.state_dim,) or x2.shape != (spec.state_dim,):
        raise InvalidInput("state dimension mismatch")
    ds = spec.norm(x - x2)
    da = spec.norm(actions[:, None, :] - actions[None, :, :])
    return float(spec.combine(ds, da).min())


def diameter(points, spec: MetricSpec) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, spec.dim)
    if len(pts) < 2:
        return 0.0
    return float(pdist(pts, metric=_SCIPY_NAMES[spec.kind]).max())


def is_packing(points, r: float, spec: MetricSpec) -> bool:
    pts = np.asarray(points, dtype=float).reshape(-1, spec.dim)
    if len(pts) < 2:
        return True
    return bool(pdist(pts, metric=_SCIPY_NAMES[spec.kind]).min() >= r)


def covers(centers, region, r: float, spec: MetricSpec) -> bool:
    """True if every region point lies in some open ball B(center, r)."""
    region = np.asarray(region, dtype=float).reshape(-1, spec.dim)
    if len(region) == 0:
        return True
    centers = np.asarray(centers, dtype=float).reshape(-1, spec.dim)
    if len(centers) == 0:
        return False
    return bool((pairwise(region, centers, spec).min(axis=1) < r).all())


def greedy_net_indices(region: np.ndarray, r: float, spec: MetricSpec) -> np.ndarray:
    """Farthest-point traversal seeded at ``region[0]``; returns row indices."""
    if r <= 0:
        raise InvalidInput("net scale must be positive")
    n = len(region)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    chosen = [0]
    mind = spec.norm(region - region[0])
    while True:
        far = int(np.argmax(mind))
        # ties at exactly r go to the packing side: the point is not covered
        if mind[far] < r:
            break
        chosen.append(far)
        np.minimum(mind, spec.norm(region - region[far]), out=mind)
    return np.asarray(chosen, dtype=np.int64)


def greedy_net(region, r: float, spec: MetricSpec) -> np.ndarray:
    """An r-net of a finite region: pairwise >= r, every point within < r."""
    region = np.asarray(region, dtype=float).reshape(-1, spec.dim)
    return region[greedy_net_indices(region, r, spec)]


@dataclass(frozen=True)
class PackingResult:
    value: int
    exact: bool
    members: np.ndarray = field(repr=False, compare=False, default=None)

    def __int__(self):
        return self.value


def _max_independent_set(adj: list[int], n: int) -> tuple[int, int]:
    """Exact maximum independent set over bitmask adjacency; returns (size, member mask)."""
    best, best_set = 0, 0

    def popcount(m: int) -> int:
        return bin(m).count("1")

    def rec(mask: int, size: int, chosen: int):
        nonlocal best, best_set
        if mask == 0:
            if size > best:
                best, best_set = size, chosen
            return
        if size + popcount(mask) <= best:
            return
        # branch on the vertex with most live neighbours
        v, deg = -1, -1
        m = mask
        while m:
            low = m & -m
            i = low.bit_length() - 1
            d = popcount(adj[i] & mask)
            if d > deg:
                v, deg = i, d
            m ^= low
        bit = 1 << v
        if deg == 0:
            # isolated vertices are always taken
            rec(mask & ~bit, size + 1, chosen | bit)
            return
        rec(mask & ~bit & ~adj[v], size + 1, chosen | bit)
        rec(mask & ~bit, size, chosen)

    rec((1 << n) - 1, 0, 0)
    return best, best_set


def _scan_greedy_packing(pts: np.ndarray, r: float, spec: MetricSpec) -> np.ndarray:
    """Maximal r-packing by a single scan in input order, bucketed by cells of side r."""
    cells: dict[tuple, list[int]] = {}
    keys = np.floor(pts / r).astype(np.int64)
    offsets = list(itertools.product((-1, 0, 1), repeat=pts.shape[1]))
    taken = []
    for i in range(len(pts)):
        key = tuple(keys[i])
        ok = True
        for off in offsets:
            nb = cells.get(tuple(k + o for k, o in zip(key, off)))
            if nb and (spec.norm(pts[nb] - pts[i]) < r).any():
                ok = False
                break
        if ok:
            cells.setdefault(key, []).append(i)
            taken.append(i)
    return np.asarray(taken, dtype=np.int64)


def packing_number(region, r: float, spec: MetricSpec, exact_threshold: int = 25) -> PackingResult:
    """Maximum r-packing size of a finite region.

    Exact (branch and bound over the conflict graph) when the region has at
    most ``exact_threshold`` points, otherwise the size of a maximal packing
    found greedily, which is a lower bound and flagged ``exact=False``.
    """
    if r <= 0:
        raise InvalidInput("packing scale must be positive")
    pts = np.asarray(region, dtype=float).reshape(-1, spec.dim)
    n = len(pts)
    if n == 0:
        return PackingResult(0, True, pts)
    if n <= exact_threshold:
        close = pairwise(pts, pts, spec) < r
        np.fill_diagonal(close, False)
        adj = [int(sum(1 << j for j in np.flatnonzero(row))) for row in close]
        size, chosen = _max_independent_set(adj, n)
        idx = [i for i in range(n) if chosen >> i & 1]
        return PackingResult(size, True, pts[idx])
    idx = _scan_greedy_packing(pts, r, spec)
    return PackingResult(len(idx), False, pts[idx])


@dataclass(frozen=True)
class WitnessGrid:
    """Regular grid on the unit state box times the unit action box.

    Spacing is ``2**-level`` on every axis, so grids at different levels nest
    and all coordinates are exact dyadic floats.
    """

    level: int
    state_dim: int = 1
    action_dim: int = 1

    @property
    def spacing(self) -> float:
        return 2.0 ** -self.level

    @property
    def per_axis(self) -> int:
        return 2 ** self.level + 1

    @staticmethod
    def _box(n: int, d: int) -> np.ndarray:
        axis = np.linspace(0.0, 1.0, n)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def states(self) -> np.ndarray:
        return self._box(self.per_axis, self.state_dim)

    @cached_property
    def actions(self) -> np.ndarray:
        return self._box(self.per_axis, self.action_dim)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.states), len(self.actions)

    def _index(self, v, d: int) -> int:
        if d == 1:
            u = float(v[0]) if np.ndim(v) else float(v)
            return min(max(int(round(u * 2 ** self.level)), 0), self.per_axis - 1)
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.shape != (d,):
            raise InvalidInput(f"expected {d} coordinates, got {v.shape}")
        idx = np.clip(np.rint(v * 2 ** self.level), 0, self.per_axis - 1).astype(np.int64)
        return int(np.ravel_multi_index(tuple(idx), (self.per_axis,) * d))

    def state_index(self, x) -> int:
        """Row of the nearest witness state."""
        return self._index(x, self.state_dim)

    def action_index(self, a) -> int:
        return self._index(a, self.action_dim)

    def joint_points(self, rows=None, cols=None) -> np.ndarray:
        """Joint coordinates of ``rows x cols`` in row-major order."""
        S = self.states if rows is None else self.states[rows]
        A = self.actions if cols is None else self.actions[cols]
        return np.concatenate(
            [np.repeat(S, len(A), axis=0), np.tile(A, (len(S), 1))], axis=1
        )
