import csv
import json
import time

import numpy as np
import pytest

from zoomq import harness
from zoomq.cli import main
from zoomq.errors import InvalidInput
from zoomq.harness import ExperimentConfig, UsageError, compare, run_experiment

ARTIFACTS = ("episodes.jsonl", "tree.json", "regret.csv", "regret.svg", "summary.json")


def smoke(tmp_path, name="run", **kw):
    cfg = dict(env="line-bandit", episodes=100, seeds=[0], grid=2.0 ** -6, out=str(tmp_path / name))
    cfg.update(kw)
    return ExperimentConfig(**cfg)


def test_smoke_run(tmp_path):
    t0 = time.perf_counter()
    out = run_experiment(smoke(tmp_path))
    assert time.perf_counter() - t0 < 5
    for name in ARTIFACTS:
        assert (out / "seed-0" / name).stat().st_size > 0
    assert (out / "config.json").exists()


def test_regret_csv_matches_log(tmp_path):
    out = run_experiment(smoke(tmp_path, episodes=150, env="needle-mdp", seeds=[3]))
    d = out / "seed-3"
    with open(d / "regret.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 150
    recs = [json.loads(line) for line in open(d / "episodes.jsonl")]
    returns = np.zeros(150)
    for r in recs:
        returns[r["episode"] - 1] += r["reward"]
    np.testing.assert_allclose([float(r["return"]) for r in rows], returns, atol=1e-12)
    summary = json.loads((d / "summary.json").read_text())
    assert summary["total_return"] == pytest.approx(returns.sum())
    assert summary["regret"] == pytest.approx(float(rows[-1]["cumulative_regret"]))
    assert summary["checks"]["partition"]["ok"] and summary["checks"]["counts"]["ok"]


def test_repeat_is_byte_identical(tmp_path):
    a = run_experiment(smoke(tmp_path, "a", env="band-mdp", noise=0.05, seeds=[1, 2]))
    b = run_experiment(smoke(tmp_path, "b", env="band-mdp", noise=0.05, seeds=[1, 2]))
    for s in (1, 2):
        for name in ("episodes.jsonl", "regret.csv", "tree.json"):
            assert (a / f"seed-{s}" / name).read_bytes() == (b / f"seed-{s}" / name).read_bytes()
    assert (a / "seed-1" / "episodes.jsonl").read_bytes() != (a / "seed-2" / "episodes.jsonl").read_bytes()


def test_uniform_run(tmp_path):
    out = run_experiment(smoke(tmp_path, agent="uniform", eps=0.25, env="flat-mdp"))
    s = json.loads((out / "seed-0" / "summary.json").read_text())
    assert s["eps"] == 0.25 and s["checks"]["partition"]["ok"]
    assert s["regret"] == pytest.approx(0.0, abs=1e-9)
    assert json.loads((out / "seed-0" / "tree.json").read_text())["agent"] == "uniform"


@pytest.mark.parametrize("bad,field", [
    (dict(env=None), "env"), (dict(env="moon"), "env"), (dict(episodes=0), "episodes"),
    (dict(delta=1.5), "delta"), (dict(grid=0.3), "grid"), (dict(agent="greedy"), "agent"),
    (dict(seeds=[]), "seeds"), (dict(noise=-1), "noise"),
])
def test_validation_names_field(tmp_path, bad, field):
    with pytest.raises(UsageError) as exc:
        smoke(tmp_path, **bad).validate()
    assert exc.value.field == field
    assert isinstance(exc.value, InvalidInput)


def test_unknown_config_field():
    with pytest.raises(UsageError) as exc:
        ExperimentConfig.from_dict({"env": "flat-mdp", "episodez": 3})
    assert exc.value.field == "episodez"


def test_cli_missing_env(tmp_path, capsys):
    assert main(["run", "--episodes", "10", "--out", str(tmp_path)]) == 2
    assert "env" in capsys.readouterr().err
    assert main(["run", "--env", "line-bandit", "--grid", "0.3", "--out", str(tmp_path)]) == 2
    assert main(["frobnicate"]) == 2


def test_cli_run_with_config_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"env": "flat-mdp", "episodes": 40, "seeds": [5], "grid": 0.0625}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(conf), "--episodes", "25", "--out", str(out), "--no-svg"]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["episodes"] == 25 and cfg["env"] == "flat-mdp" and cfg["seeds"] == [5]
    assert not (out / "seed-5" / "regret.svg").exists()
    assert len((out / "seed-5" / "regret.csv").read_text().splitlines()) == 26
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["run", "--config", str(bad)]) == 2


def test_invariant_failure_exit_code(tmp_path, monkeypatch):
    def broken(cfg, seed, oracle=None, partition=None):
        res = real(cfg, seed, oracle, partition)
        res.checks["partition"]["ok"] = False
        return res

    real = harness.run_seed
    monkeypatch.setattr(harness, "run_seed", broken)
    code = main(["run", "--env", "line-bandit", "--episodes", "20", "--grid", "0.0625", "--out", str(tmp_path)])
    assert code == 3
    assert (tmp_path / "seed-0" / "summary.json").exists()


def test_compare(tmp_path):
    a = run_experiment(smoke(tmp_path, "a", seeds=[0, 1]))
    b = run_experiment(smoke(tmp_path, "b", seeds=[0, 1]))
    rep = compare(a, b, tmp_path / "cmp")
    assert rep["regret_difference"] == 0.0
    with open(tmp_path / "cmp" / "compare.csv") as fh:
        assert all(float(r["difference"]) == 0.0 for r in csv.DictReader(fh))
    assert rep["a"]["radius_histogram"] == rep["b"]["radius_histogram"]
    assert (tmp_path / "cmp" / "compare.svg").exists()
    u = run_experiment(smoke(tmp_path, "u", agent="uniform", eps=0.25, seeds=[0, 1]))
    assert main(["compare", "--a", str(a), "--b", str(u), "--out", str(tmp_path / "cmp2")]) == 0
    other = run_experiment(smoke(tmp_path, "other", episodes=50))
    with pytest.raises(InvalidInput):
        compare(a, other, tmp_path / "cmp3")
    assert main(["compare", "--a", str(a), "--b", str(other), "--out", str(tmp_path / "cmp3")]) == 2


def test_dims(tmp_path):
    rep = harness.dims("needle-mdp", [1, 2, 3, 4], tmp_path / "d", grid=2.0 ** -7)
    assert len(rep["zooming"]) == 2
    assert all(np.all(np.array(z["counts"]) <= np.array(rep["covering"]["counts"])) for z in rep["zooming"])
    assert rep["theorem_bound"] > 0
    with open(tmp_path / "d" / "profiles.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3 * 4
    assert main(["dims", "--env", "flat-mdp", "--scales", "1-3", "--grid", "0.0625", "--out", str(tmp_path / "e")]) == 0
    assert main(["dims", "--env", "flat-mdp", "--scales", "1-6", "--grid", "0.0625", "--out", str(tmp_path / "e")]) == 2
