import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zoomq import diagnostics as diag
from zoomq.adaptive import AdaptiveQLearning, AgentConfig, EpisodeLog, PartitionTree, bonus
from zoomq.env import OracleTables, build_oracle, make_env
from zoomq.errors import InvalidInput
from zoomq.metric import MetricSpec, WitnessGrid, packing_number


def test_alpha_weight_examples():
    assert diag.alpha_weight(1, 1, 3) == 1.0
    assert diag.alpha_weight(6, 6, 2) == pytest.approx(3 / 8)
    tail = diag.alpha_weight_tail(3, 2, 12)
    assert tail[0] == diag.alpha_weight(3, 3, 2)
    assert tail[-1] == pytest.approx(diag.alpha_weight(12, 3, 2))
    with pytest.raises(InvalidInput):
        diag.alpha_weight(2, 3, 1)


@pytest.mark.parametrize("H", [1, 4, 10])
def test_alpha_weights_sum(H):
    for i in (1, 5, 40):
        assert abs(diag.alpha_weight_tail(i, H, i + 1_000_000).sum() - (1 + 1 / H)) <= 1e-3
    # and for fixed t the weights over i = 1..t sum to one
    t = 30
    assert sum(diag.alpha_weight(t, i, H) for i in range(1, t + 1)) == pytest.approx(1.0)


def test_beta_matches_recursion_and_bound():
    cfg = AgentConfig(H=3, K=1000, delta=0.1, L=1.5)
    assert diag.beta(1, cfg) == pytest.approx(2 * bonus(1, cfg))
    table = diag.beta_table(200, cfg)
    for t in (1, 2, 7, 64, 200):
        assert diag.beta(t, cfg) == pytest.approx(table[t], rel=1e-12)
    t = np.arange(1, 201)
    assert (table[1:] <= diag.beta_bound(t, cfg)).all()
    env = 8 * math.sqrt(cfg.H ** 3 * cfg.log_term) + 16 * cfg.L * cfg.d_max
    assert (np.sqrt(t) * table[1:] <= env).all()


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_clip(mu, nu):
    c = diag.clip(mu, nu)
    assert c in (0.0, mu)
    assert diag.clip(c, nu) == c or (c == 0.0 and diag.clip(0.0, nu) == 0.0)
    assert (c == mu) == (mu >= nu) or mu == 0.0


def test_clip_examples():
    assert diag.clip(5, 3) == 5
    assert diag.clip(2, 3) == 0
    assert diag.clip(3, 3) == 3


def test_near_optimal_set(line_oracle):
    cfg = AgentConfig(H=1, K=100, L=1.0)
    assert diag.near_optimal_constant(cfg) == 6.0
    full = diag.near_optimal_set(line_oracle, 1, 1.0, cfg)
    assert len(full) == line_oracle.gaps[0].size
    r = 2.0 ** -5
    P = diag.near_optimal_set(line_oracle, 1, r, cfg)
    x, a = P.points[:, 0], P.points[:, 1]
    assert (np.abs(a - x) <= 6 * r + 1e-12).all()
    grid_x, grid_a = np.meshgrid(line_oracle.states[:, 0], line_oracle.actions[:, 0], indexing="ij")
    assert len(P) == int((np.abs(grid_a - grid_x) <= 6 * r).sum())
    best = line_oracle.Q[0].argmax(axis=1)
    members = set(zip(P.rows.tolist(), P.cols.tolist()))
    assert all((i, int(j)) in members for i, j in enumerate(best))
    with pytest.raises(InvalidInput):
        diag.near_optimal_set(line_oracle, 1, 0.0, cfg)


@given(st.integers(1, 7), st.integers(1, 7))
def test_near_optimal_monotone(i, j):
    orc = build_oracle(make_env("needle-mdp"), 2.0 ** -6)
    cfg = AgentConfig(H=2, K=10, L=4.0)
    r, r2 = sorted((2.0 ** -i, 2.0 ** -j))
    small = diag.near_optimal_set(orc, 1, r, cfg)
    big = diag.near_optimal_set(orc, 1, r2, cfg)
    assert set(zip(small.rows, small.cols)) <= set(zip(big.rows, big.cols))


def test_profiles():
    flat = build_oracle(make_env("flat-mdp"), 2.0 ** -7)
    cfg = AgentConfig(H=3, K=10, L=0.0)
    scales = diag.scales_from_exponents(range(0, 5))
    z = diag.zooming_profile(flat, 2, scales, cfg)
    c = diag.covering_profile(flat, scales)
    np.testing.assert_array_equal(z.counts, c.counts)
    assert c.counts[0] == 4  # the corners of the square
    needle = build_oracle(make_env("needle-mdp"), 2.0 ** -7)
    zc = diag.zooming_profile(needle, 1, scales, AgentConfig(H=2, K=10, L=4.0))
    cc = diag.covering_profile(needle, scales)
    assert (zc.counts <= cc.counts).all()
    assert zc.counts[0] == cc.counts[0]


def test_dimension_fit():
    r = 2.0 ** -np.arange(1, 7)
    assert diag.dimension_fit(r, 3 / r).slope == pytest.approx(1.0)
    assert diag.dimension_fit(r, np.full(6, 4.0)).slope == 0.0
    fit = diag.dimension_fit(r, 5 * r ** -1.5 * np.exp(0.05 * np.sin(np.arange(6))))
    assert fit.lo <= 1.5 <= fit.hi
    with pytest.raises(InvalidInput):
        diag.dimension_fit(r[:2], [1, 2])
    with pytest.raises(InvalidInput):
        diag.dimension_fit(r[:3], [1, 0, 2])


def test_dimension_fit_on_grid_packing():
    spec = MetricSpec()
    scales = 2.0 ** -np.arange(2, 6)
    counts = []
    for r in scales:
        g = WitnessGrid(int(-np.log2(r)) + 1)
        counts.append(packing_number(g.joint_points(), r, spec).value)
    assert abs(diag.dimension_fit(scales, counts).slope - 2) <= 0.2


def fake_oracle(v):
    grid = WitnessGrid(1)
    Q = np.full((1, 3, 3), v)
    return OracleTables(grid, 1, MetricSpec(), Q, Q.max(axis=2), np.zeros_like(Q))


def test_regret_arithmetic():
    log = EpisodeLog(1, 1)
    log.reward[0, 0] = 0.4
    log.completed = 1
    rep = diag.regret(log, fake_oracle(0.9))
    assert rep.total == pytest.approx(0.5)
    log2 = EpisodeLog(3, 1)
    log2.completed = 2
    with pytest.raises(InvalidInput):
        diag.regret(log2, fake_oracle(0.9))


def test_optimal_policy_has_no_regret():
    env = make_env("line-bandit", seed=3)
    orc = build_oracle(env, 2.0 ** -6)
    K = 50
    log = EpisodeLog(K, 1)
    for k in range(1, K + 1):
        x = env.initial(k)
        row = orc.state_rows(x)[0]
        a = orc.actions[orc.Q[0, row].argmax()]
        log.state[k - 1, 0] = x
        log.reward[k - 1, 0] = float(env.reward(1, x, a))
    log.completed = K
    rep = diag.regret(log, orc)
    assert np.abs(rep.per_episode).max() <= orc.eps_grid


def test_line_bandit_regret_is_sublinear(line_oracle):
    env = make_env("line-bandit", seed=11)
    log = AdaptiveQLearning(env, AgentConfig.for_env(env, 20_000, L=1.0)).run(11)
    rep = diag.regret(log, line_oracle)
    cum = rep.cumulative
    assert rep.total > 0
    assert rep.slope < 1
    # the last half pays less per episode than the first thousand
    assert (cum[-1] - cum[9999]) / 10_000 < cum[999] / 1000


def run_with_oracle(name, K, seed=0, **kw):
    env = make_env(name, seed=seed)
    cfg = AgentConfig.for_env(env, K, **kw)
    agent = AdaptiveQLearning(env, cfg)
    agent.run(seed)
    return agent, cfg, build_oracle(env, 2.0 ** -8)


def test_ledger_flat_never_clips():
    agent, cfg, orc = run_with_oracle("flat-mdp", 300)
    led = diag.clipped_surplus_ledger(agent.log, orc, cfg)
    assert (led.gap == 0).all()
    assert led.total == pytest.approx(led.beta.sum())


def test_ledger_recomputed_from_records():
    agent, cfg, orc = run_with_oracle("band-mdp", 400, seed=2)
    led = diag.clipped_surplus_ledger(agent.log, orc, cfg)
    total = 0.0
    for rec in agent.log.iter_records():
        n = rec["t"] - 1
        b = diag.beta(n, cfg) if n else 0.0
        g = orc.gaps[rec["stage"] - 1, orc.state_rows(rec["state"])[0], orc.action_cols(rec["action"])[0]]
        total += diag.clip(b, g / (cfg.H + 1))
    assert led.total == pytest.approx(total, rel=1e-9)
    assert sum(led.per_ball.values()) == pytest.approx(led.total)
    assert set(np.unique(led.clipped[led.clipped > 0] == led.beta[led.clipped > 0])) <= {True}


def test_ledger_zero_for_balls_below_threshold():
    agent, cfg, orc = run_with_oracle("needle-mdp", 2000, seed=1)
    led = diag.clipped_surplus_ledger(agent.log, orc, cfg)
    below = {}
    for s, b, beta, g in zip(led.stage, led.ball, led.beta, led.gap):
        key = (int(s), int(b))
        below[key] = below.get(key, True) and beta < g / (cfg.H + 1)
    zero = [k for k, v in below.items() if v]
    assert all(led.per_ball[k] == 0.0 for k in zero)
    assert set(zero) <= set(led.fully_clipped())


def test_theorem_bound():
    cfg = AgentConfig(H=2, K=100, delta=0.1, L=1.0)
    one = diag.Profile("zooming", 1, np.array([1.0]), np.array([1]), np.array([True]))
    log = math.log(4 * 2 * 100 / 0.1)
    expect = 9 * 4 + 18 * math.sqrt(2 * 8 * 100 * log) + 2 * 288 * (math.sqrt(8 * log) + 1) * (1 + 100)
    assert diag.theorem_bound(one, cfg) == pytest.approx(expect)
    prof = diag.Profile("zooming", 1, 2.0 ** -np.arange(5), np.array([1, 4, 12, 30, 70]), np.ones(5, bool))
    vals = [diag.theorem_bound(prof, cfg, K=K) for K in (10, 100, 1000, 10_000)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(InvalidInput):
        diag.theorem_bound([prof], cfg)


def tiny_tree():
    return PartitionTree(1, MetricSpec(), WitnessGrid(4), 2, max_depth=3)


def test_checks_on_fresh_tree():
    t = tiny_tree()
    assert diag.check_partition(t).ok
    assert diag.check_counts(t).ok


def test_planted_separation_fault():
    t = tiny_tree()
    kids = t.split(0)
    # move one child onto another's neighbourhood
    t.cs[kids[1]] = t.cs[kids[0]]
    t.ca[kids[1]] = t.ca[kids[0]] + 0.125
    rep = diag.check_partition(t)
    assert not rep.separation
    assert any({a, b} == {kids[0], kids[1]} for a, b, _ in rep.close_pairs)


def test_planted_cover_and_count_faults():
    t = tiny_tree()
    kids = t.split(0)
    t.active[kids[0]] = False
    rep = diag.check_partition(t)
    assert not rep.covering and rep.uncovered
    t.inherited[kids[2]] = 3
    counts = diag.check_counts(t)
    assert counts.inherit_violations and counts.conservation_violations


def test_monitor_matches_full_check():
    env = make_env("band-mdp", seed=9)
    agent = AdaptiveQLearning(env, AgentConfig.for_env(env, 500))
    mons = [diag.PartitionMonitor(t) for t in agent.trees]
    agent.run(9, callback=lambda a, k: [m(k) for m in mons])
    assert all(not m.violations for m in mons)
    assert all(m.checks > 1 for m in mons)
    assert all(diag.check_partition(t).ok for t in agent.trees)
    t = agent.trees[0]
    i = int(t.active_ids[0])
    t.cs[t.n - 1], t.ca[t.n - 1] = t.cs[i], t.ca[i]
    t.depth[t.n - 1] = t.depth[i]
    assert not diag.check_partition(t).separation


def test_optimism_check_flags_planted_fault():
    agent, cfg, orc = run_with_oracle("band-mdp", 200, seed=3)
    log = agent.log
    assert diag.check_optimism(log, orc, cfg.L).ok
    log.q_before[10, 1] = -1.0
    rep = diag.check_optimism(log, orc, cfg.L)
    assert [(v[0], v[1]) for v in rep.violations] == [(11, 2)]


def test_finest_ball_fraction(band_oracle):
    env = make_env("band-mdp", seed=1)
    cfg = AgentConfig.for_env(env, 3000)
    agent = AdaptiveQLearning(env, cfg)
    agent.run(1)
    frac, ids, inside = diag.finest_ball_fraction(agent.trees[0], band_oracle, cfg)
    t = agent.trees[0]
    assert set(t.depth[ids]) == set(np.unique(t.depth[: t.n])[-2:])
    assert 0.0 <= frac <= 1.0 and frac == inside.mean()
