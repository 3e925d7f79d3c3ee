"""Experiment matrices shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag
from .adaptive import AdaptiveQLearning, AgentConfig
from .env import build_oracle, make_env
from .uniform import UniformQLearning, build_uniform


@dataclass
class SweepResult:
    Ks: list
    seeds: list
    adaptive: np.ndarray  # (len(Ks), len(seeds)) final regret
    uniform: dict  # eps -> array like adaptive
    finest_fraction: list  # per seed, at the largest K
    seconds: float
    fits: dict = field(default_factory=dict)

    def median_curve(self, arr) -> np.ndarray:
        return np.median(arr, axis=1)

    def fit(self, arr) -> diag.SlopeFit | None:
        return diag.regret_slope(self.Ks, self.median_curve(arr))

    @property
    def adaptive_slope(self) -> float:
        return self.fit(self.adaptive).slope

    @property
    def uniform_slopes(self) -> dict:
        return {eps: self.fit(arr).slope for eps, arr in self.uniform.items()}

    @property
    def best_uniform(self) -> tuple:
        eps, s = min(self.uniform_slopes.items(), key=lambda kv: kv[1])
        return eps, s


def adaptivity_sweep(env_name="band-mdp", Ks=(1_000, 3_000, 10_000, 30_000, 100_000), seeds=range(5),
                     exponents=range(1, 7), horizon=None, delta=0.05, grid=2.0 ** -9, progress=None) -> SweepResult:
    """Final regret of the adaptive agent and each uniform-eps baseline at every (K, seed)."""
    t0 = time.perf_counter()
    Ks, seeds = list(Ks), list(seeds)
    env0 = make_env(env_name, horizon)
    oracle = build_oracle(env0, grid)
    adaptive = np.zeros((len(Ks), len(seeds)))
    finest = []
    for a, K in enumerate(Ks):
        for b, s in enumerate(seeds):
            env = make_env(env_name, horizon, seed=s)
            cfg = AgentConfig.for_env(env, K, delta=delta)
            agent = AdaptiveQLearning(env, cfg)
            agent.run(s)
            adaptive[a, b] = diag.regret(agent.log, oracle).total
            if K == max(Ks):
                fr = [diag.finest_ball_fraction(t, oracle, cfg) for t in agent.trees]
                ids = sum(len(f[1]) for f in fr)
                finest.append(sum(f[2].sum() for f in fr) / ids)
            if progress:
                progress(f"adaptive K={K} seed={s} regret={adaptive[a, b]:.1f}")
    uniform = {}
    for i in exponents:
        eps = env0.d_max * 2.0 ** -i
        part = build_uniform(eps, env0.metric, H=env0.horizon)
        arr = np.zeros((len(Ks), len(seeds)))
        for a, K in enumerate(Ks):
            for b, s in enumerate(seeds):
                env = make_env(env_name, horizon, seed=s)
                cfg = AgentConfig.for_env(env, K, delta=delta)
                part.q[:] = float(cfg.H)
                part.count[:] = 0
                agent = UniformQLearning(env, cfg, eps, part)
                agent.run(s)
                arr[a, b] = diag.regret(agent.log, oracle).total
            if progress:
                progress(f"uniform eps={eps} K={K} median regret={np.median(arr[a]):.1f}")
        uniform[eps] = arr
    return SweepResult(Ks, seeds, adaptive, uniform, finest, time.perf_counter() - t0)
