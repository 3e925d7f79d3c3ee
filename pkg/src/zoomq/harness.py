"""Experiment orchestration: seeded runs, per-seed artifacts, comparisons, dimension reports."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .adaptive import AdaptiveQLearning, AgentConfig, EpisodeLog
from .env import BENCHMARKS, build_oracle, grid_level, make_env
from .errors import InvalidInput, InvariantViolation
from .metric import covers, is_packing
from .uniform import UniformQLearning, build_uniform

log = logging.getLogger(__name__)


class UsageError(InvalidInput):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    env: str | None = None
    agent: str = "adaptive"
    episodes: int = 1000
    horizon: int | None = None
    delta: float = 0.05
    L: float | None = None
    grid: float = 2.0 ** -9  # oracle resolution eps_grid
    eps: float = 0.125  # uniform baseline ball radius
    seeds: list = field(default_factory=lambda: [0])
    max_depth: int | None = None
    noise: float = 0.0
    out: str = "runs"
    check_every_episode: bool = True
    svg: bool = True

    def validate(self) -> "ExperimentConfig":
        if not self.env:
            raise UsageError("env", f"an environment name is required ({', '.join(BENCHMARKS)})")
        if self.env not in BENCHMARKS:
            raise UsageError("env", f"unknown environment {self.env!r}")
        if self.agent not in ("adaptive", "uniform"):
            raise UsageError("agent", "must be 'adaptive' or 'uniform'")
        if int(self.episodes) < 1:
            raise UsageError("episodes", "must be >= 1")
        if self.horizon is not None and int(self.horizon) < 1:
            raise UsageError("horizon", "must be >= 1")
        if not 0 < self.delta < 1:
            raise UsageError("delta", "must lie in (0, 1)")
        if self.L is not None and self.L < 0:
            raise UsageError("L", "must be >= 0")
        try:
            grid_level(self.grid)
        except InvalidInput as e:
            raise UsageError("grid", str(e)) from None
        if not 0 < self.eps <= 1:
            raise UsageError("eps", "must lie in (0, 1]")
        if not self.seeds:
            raise UsageError("seeds", "at least one seed is required")
        if self.max_depth is not None and not 0 <= self.max_depth <= 10:
            raise UsageError("max_depth", "must lie in 0..10")
        if not 0 <= self.noise < 0.5:
            raise UsageError("noise", "must lie in [0, 0.5)")
        self.seeds = [int(s) for s in self.seeds]
        self.episodes = int(self.episodes)
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise UsageError(sorted(extra)[0], "unknown config field")
        return cls(**d)


@dataclass
class SeedResult:
    seed: int
    agent: object
    log: EpisodeLog
    report: diag.RegretReport
    checks: dict
    seconds: float


def _agent_config(cfg: ExperimentConfig, env) -> AgentConfig:
    return AgentConfig.for_env(env, cfg.episodes, delta=cfg.delta, L=cfg.L, max_depth=cfg.max_depth)


def run_seed(cfg: ExperimentConfig, seed: int, oracle=None, partition=None) -> SeedResult:
    env = make_env(cfg.env, cfg.horizon, cfg.noise, seed=seed)
    acfg = _agent_config(cfg, env)
    if oracle is None:
        oracle = build_oracle(env, cfg.grid)
    checks: dict = {}
    t0 = time.perf_counter()
    if cfg.agent == "adaptive":
        agent = AdaptiveQLearning(env, acfg)
        monitors = [diag.PartitionMonitor(t) for t in agent.trees]
        cb = None
        if cfg.check_every_episode:
            def cb(_agent, k):
                for m in monitors:
                    m(k)
        agent.run(seed, callback=cb)
        for m in monitors:
            m(acfg.K)
        counts = [diag.check_counts(t) for t in agent.trees]
        checks["partition"] = {
            "ok": all(not m.violations for m in monitors),
            "checks": sum(m.checks for m in monitors),
            "violations": [list(map(str, v)) for m in monitors for v in m.violations][:20],
        }
        checks["counts"] = {
            "ok": all(c.ok for c in counts),
            "selection_violations": sum(len(c.selection_violations) for c in counts),
            "inherit_violations": sum(len(c.inherit_violations) for c in counts),
            "conservation_violations": sum(len(c.conservation_violations) for c in counts),
            "max_selection_ratio": max(c.max_ratio for c in counts),
        }
    else:
        if partition is None:
            partition = build_uniform(cfg.eps, env.metric, H=acfg.H)
        partition.q[:] = float(acfg.H)
        partition.count[:] = 0
        agent = UniformQLearning(env, acfg, cfg.eps, partition)
        agent.run(seed)
        pts = partition.grid.joint_points()
        checks["partition"] = {
            "ok": bool(is_packing(partition.centers, cfg.eps, env.metric)
                       and covers(partition.centers, pts, cfg.eps, env.metric)),
            "checks": 1, "violations": [],
        }
    seconds = time.perf_counter() - t0
    opt = diag.check_optimism(agent.log, oracle, acfg.L)
    checks["optimism"] = {"ok": opt.ok, "violations": len(opt.violations), "slack": opt.slack}
    return SeedResult(seed, agent, agent.log, diag.regret(agent.log, oracle), checks, seconds)


# --- artifact writers ------------------------------------------------------

def write_episode_log(ep_log: EpisodeLog, path: Path) -> None:
    with open(path, "w") as fh:
        for rec in ep_log.iter_records():
            fh.write(json.dumps(rec) + "\n")


def tree_dump(agent) -> dict:
    if isinstance(agent, AdaptiveQLearning):
        stages = []
        for t in agent.trees:
            balls = []
            for i in range(t.n):
                balls.append({
                    "id": i, "depth": int(t.depth[i]), "radius": float(t.radius[i]),
                    "state": t.cs[i].tolist(), "action": t.ca[i].tolist(), "q": float(t.q[i]),
                    "count": int(t.count[i]), "inherited": int(t.inherited[i]),
                    "selections": int(t.selections[i]),
                    "parent": None if t.parent[i] < 0 else int(t.parent[i]),
                    "children": t.children.get(i, []), "created": int(t.created[i]),
                    "active": bool(t.active[i]),
                })
            stages.append({"stage": t.stage, "balls": balls})
        return {"agent": "adaptive", "stages": stages}
    P = agent.part
    stages = []
    for h in range(1, P.H + 1):
        stages.append({"stage": h, "balls": [
            {"id": i, "radius": P.eps, "state": P.cs[i].tolist(), "action": P.ca[i].tolist(),
             "q": float(P.q[h - 1, i]), "count": int(P.count[h - 1, i]), "active": True}
            for i in range(len(P))]})
    return {"agent": "uniform", "eps": P.eps, "stages": stages}


def write_regret_csv(report: diag.RegretReport, path: Path) -> None:
    cum = report.cumulative
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "v_star", "return", "regret", "cumulative_regret"])
        for k in range(report.K):
            w.writerow([k + 1, repr(float(report.v_star[k])), repr(float(report.returns[k])),
                        repr(float(report.per_episode[k])), repr(float(cum[k]))])


def read_regret_csv(path: Path) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["cumulative_regret"]) for r in rows])


def svg_curves(series: dict, path: Path, title: str = "", width: int = 640, height: int = 400) -> None:
    """Minimal line plot of ``{label: y-array}`` against episode index."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    pad = 50
    n = max(len(y) for y in series.values())
    ymax = max(float(np.max(y)) for y in series.values()) or 1.0
    ymin = min(0.0, min(float(np.min(y)) for y in series.values()))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - 10}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{pad}" y2="10" stroke="black"/>',
             f'<text x="{width - 60}" y="{height - 15}" font-size="12">K={n}</text>',
             f'<text x="5" y="25" font-size="12">{ymax:.4g}</text>']
    for c, (label, y) in enumerate(series.items()):
        y = np.asarray(y, dtype=float)
        idx = np.unique(np.linspace(0, len(y) - 1, min(len(y), 400)).astype(int))
        xs = pad + idx / max(n - 1, 1) * (width - pad - 10)
        ys = height - pad - (y[idx] - ymin) / (ymax - ymin) * (height - pad - 10)
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(xs, ys))
        col = colors[c % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{pad + 10}" y="{40 + 16 * c}" font-size="12" fill="{col}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _fit_dict(fit) -> dict | None:
    return None if fit is None else asdict(fit)


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every seed and write its artifacts under ``cfg.out/seed-<S>``.

    Raises :class:`InvariantViolation` after writing, if any seed failed a
    partition or count check.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")
    env0 = make_env(cfg.env, cfg.horizon, cfg.noise)
    oracle = build_oracle(env0, cfg.grid)
    partition = build_uniform(cfg.eps, env0.metric, H=env0.horizon) if cfg.agent == "uniform" else None
    broken = []
    summaries = []
    for seed in cfg.seeds:
        res = run_seed(cfg, seed, oracle, partition)
        d = out / f"seed-{seed}"
        d.mkdir(exist_ok=True)
        write_episode_log(res.log, d / "episodes.jsonl")
        (d / "tree.json").write_text(json.dumps(tree_dump(res.agent)) + "\n")
        write_regret_csv(res.report, d / "regret.csv")
        if cfg.svg:
            svg_curves({cfg.agent: res.report.cumulative}, d / "regret.svg", f"{cfg.env} cumulative regret")
        summary = {
            "env": cfg.env, "agent": cfg.agent, "K": cfg.episodes, "H": res.log.H, "seed": seed,
            "delta": cfg.delta, "L": res.agent.config.L, "eps_grid": cfg.grid,
            "eps": cfg.eps if cfg.agent == "uniform" else None,
            "total_return": float(res.log.returns.sum()), "total_v_star": float(res.report.v_star.sum()),
            "regret": res.report.total, "slope": _fit_dict(res.report.fit),
            "checks": res.checks, "seconds": round(res.seconds, 3),
        }
        (d / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        summaries.append(summary)
        log.info("seed %d: regret %.1f slope %s", seed, res.report.total, res.report.slope)
        if not (res.checks["partition"]["ok"] and res.checks.get("counts", {"ok": True})["ok"]):
            broken.append(seed)
    (out / "summary.json").write_text(json.dumps({
        "env": cfg.env, "agent": cfg.agent, "K": cfg.episodes, "seeds": cfg.seeds,
        "regret": [s["regret"] for s in summaries],
        "median_regret": float(np.median([s["regret"] for s in summaries])),
    }, indent=2) + "\n")
    if broken:
        raise InvariantViolation(f"invariant checks failed for seeds {broken}")
    return out


# --- comparison and dimension reports --------------------------------------

def _load_run(d: Path) -> dict:
    d = Path(d)
    top = json.loads((d / "summary.json").read_text())
    seeds = []
    for s in top["seeds"]:
        sd = d / f"seed-{s}"
        seeds.append({
            "seed": s,
            "summary": json.loads((sd / "summary.json").read_text()),
            "cumulative": read_regret_csv(sd / "regret.csv"),
            "tree": json.loads((sd / "tree.json").read_text()),
        })
    return {"top": top, "seeds": seeds}


def _radius_histogram(tree: dict) -> dict:
    hist: dict = {}
    for st in tree["stages"]:
        for b in st["balls"]:
            if b.get("active", True):
                key = repr(b["radius"])
                hist[key] = hist.get(key, 0) + 1
    return dict(sorted(hist.items(), key=lambda kv: -float(kv[0])))


def compare(dir_a, dir_b, out) -> dict:
    a, b = _load_run(dir_a), _load_run(dir_b)
    if a["top"]["env"] != b["top"]["env"] or a["top"]["K"] != b["top"]["K"]:
        raise InvalidInput("runs must share env and K")
    K = a["top"]["K"]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ca = np.median([s["cumulative"] for s in a["seeds"]], axis=0)
    cb = np.median([s["cumulative"] for s in b["seeds"]], axis=0)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "regret_a", "regret_b", "difference"])
        for k in range(K):
            w.writerow([k + 1, repr(float(ca[k])), repr(float(cb[k])), repr(float(ca[k] - cb[k]))])
    ks = diag.checkpoints(K)
    report = {
        "env": a["top"]["env"], "K": K,
        "a": {"dir": str(dir_a), "agent": a["top"]["agent"], "regret": float(ca[-1]),
              "slope": _fit_dict(diag.regret_slope(ks, ca[ks - 1])),
              "radius_histogram": [_radius_histogram(s["tree"]) for s in a["seeds"]]},
        "b": {"dir": str(dir_b), "agent": b["top"]["agent"], "regret": float(cb[-1]),
              "slope": _fit_dict(diag.regret_slope(ks, cb[ks - 1])),
              "radius_histogram": [_radius_histogram(s["tree"]) for s in b["seeds"]]},
        "regret_difference": float(ca[-1] - cb[-1]),
    }
    (out / "compare.json").write_text(json.dumps(report, indent=2) + "\n")
    svg_curves({f"a ({report['a']['agent']})": ca, f"b ({report['b']['agent']})": cb},
               out / "compare.svg", f"{report['env']} median cumulative regret")
    return report


def dims(env_name: str, exponents, out, grid: float = 2.0 ** -10, L: float | None = None,
         horizon: int | None = None, K: int = 10_000, delta: float = 0.05) -> dict:
    """Zooming profiles per stage and the covering profile, with slope fits."""
    if env_name not in BENCHMARKS:
        raise UsageError("env", f"unknown environment {env_name!r}")
    env = make_env(env_name, horizon)
    cfg = AgentConfig.for_env(env, K, delta=delta, L=L)
    oracle = build_oracle(env, grid)
    scales = diag.scales_from_exponents(exponents, env.d_max)
    if scales.min() < 2 * oracle.eps_grid:
        raise UsageError("scales", "finest scale must be at least twice the oracle grid spacing")
    profiles = [diag.zooming_profile(oracle, h, scales, cfg) for h in range(1, env.horizon + 1)]
    cover = diag.covering_profile(oracle, scales)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "profiles.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["kind", "stage", "r", "count", "exact"])
        w.writeheader()
        for p in profiles + [cover]:
            w.writerows(p.rows())
    fit = (lambda p: _fit_dict(diag.dimension_fit(p.scales, p.counts)) if len(scales) >= 3 else None)
    report = {
        "env": env_name, "H": env.horizon, "L": cfg.L, "c1": diag.near_optimal_constant(cfg),
        "eps_grid": grid, "scales": scales.tolist(),
        "zooming": [{"stage": p.stage, "counts": p.counts.tolist(), "fit": fit(p)} for p in profiles],
        "covering": {"counts": cover.counts.tolist(), "fit": fit(cover)},
        "theorem_bound": diag.theorem_bound(profiles, cfg),
    }
    (out / "dims.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
