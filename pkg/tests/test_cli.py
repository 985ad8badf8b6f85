import csv
import json

import numpy as np
import pytest

from navthinker import sim
from navthinker.cli import main
from navthinker.config import ConfigError, RunConfig, from_dict, load_config
from navthinker.harness import (
    cmd_ablate,
    cmd_baseline,
    cmd_collect,
    cmd_eval,
    greedy_episodes,
    make_run_dir,
)
from navthinker.replay import ReplayStore

TINY = {
    "seed": 3, "collect_episodes": 12, "schedule": {"wm_steps": 4, "policy_steps": 64},
    "ppo": {"n_envs": 2, "rollout_len": 16, "epochs": 1, "minibatches": 2},
    "wm_train": {"eval_every": 0, "checkpoint_every": 0, "min_transitions": 8},
    "eval": {"episodes": 2}, "n_seeds": 2,
}


def write_cfg(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


# ---------------------------------------------------------------- config


def test_config_roundtrip_and_defaults():
    cfg = from_dict(TINY)
    assert cfg.ppo.n_envs == 2 and cfg.scene.rooms == 3 and cfg.ablation.lookahead
    again = from_dict(json.loads(cfg.dumps()))
    assert again == cfg
    assert RunConfig().schedule.interleave_rounds == 0 and RunConfig().collect_episodes == 2000


@pytest.mark.parametrize("data, where", [
    ({"ppo": {"gama": 0.9}}, "ppo.gama"),
    ({"scene": {"rooms": 3, "walls": 1}}, "scene.walls"),
    ({"bogus": 1}, "bogus"),
])
def test_unknown_keys_name_the_path(data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        from_dict(data)


def test_invalid_values_rejected(tmp_path):
    for bad in ({"ppo": {"gamma": 1.5}}, {"scene": {"rooms": 9}}, {"n_robots": 0}, {"seed": "x"},
                {"ablation": {"lookahead": 1}}, {"ppo": []}):
        with pytest.raises(ConfigError):
            from_dict(bad)
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.json")


def test_run_dir_contents_and_refusal(tmp_path):
    cfg = from_dict(TINY)
    d = make_run_dir(cfg, "collect", tmp_path / "run")
    meta = json.loads((d / "run.json").read_text())
    assert meta["seed"] == 3 and "numpy" in meta["versions"]
    assert from_dict(json.loads((d / "config.json").read_text())) == cfg
    with pytest.raises(RuntimeError):
        make_run_dir(cfg, "collect", tmp_path / "run")


# ---------------------------------------------------------------- CLI exit codes


def test_cli_exit_codes(tmp_path):
    good = write_cfg(tmp_path / "c.json", {**TINY, "collect_episodes": 2})
    assert main(["collect", "--config", good, "--out", str(tmp_path / "a")]) == 0
    assert main(["collect", "--config", good, "--out", str(tmp_path / "a")]) == 2
    bad = write_cfg(tmp_path / "bad.json", {"ppo": {"gama": 1}})
    assert main(["collect", "--config", bad, "--out", str(tmp_path / "b")]) == 2
    assert main(["collect", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "b")]) == 2
    assert main(["train-wm", "--config", good, "--out", str(tmp_path / "w")]) == 3
    assert not (tmp_path / "w").exists()
    missing = write_cfg(tmp_path / "m.json", {**TINY, "inputs": {"wm_checkpoint": str(tmp_path / "none.ntck")}})
    assert main(["train-policy", "--config", missing, "--out", str(tmp_path / "p")]) == 3
    assert main(["collect", "--config", good, "--seed", "-1", "--out", str(tmp_path / "s")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["fly", "--config", good])
    assert e.value.code == 2


def test_base_row_trains_without_world_model(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", {**TINY, "ablation": {"lookahead": False, "traj_reward": False}})
    assert main(["train-policy", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    rows = read_csv(tmp_path / "p" / "policy_curve.csv")
    assert len(rows) - 1 == 2  # 64 steps / (2 envs x 16) updates
    assert (tmp_path / "p" / "policy_final.ntck").is_file()


# ---------------------------------------------------------------- collect


def test_collect_zero_and_deterministic(tmp_path):
    empty = cmd_collect(from_dict({**TINY, "collect_episodes": 0}), make_run_dir(from_dict(TINY), "c", tmp_path / "z"))
    assert len(empty) == 0
    assert len(ReplayStore.load(tmp_path / "z" / "replay.ntrb")) == 0
    cfg = from_dict({**TINY, "collect_episodes": 3})
    cmd_collect(cfg, make_run_dir(cfg, "c", tmp_path / "a"))
    cmd_collect(cfg, make_run_dir(cfg, "c", tmp_path / "b"))
    assert (tmp_path / "a" / "replay.ntrb").read_bytes() == (tmp_path / "b" / "replay.ntrb").read_bytes()
    assert (tmp_path / "a" / "replay_stats.csv").read_bytes() == (tmp_path / "b" / "replay_stats.csv").read_bytes()


def test_stats_match_independent_recount(tmp_path):
    cfg = from_dict({**TINY, "collect_episodes": 4})
    cmd_collect(cfg, make_run_dir(cfg, "c", tmp_path / "a"))
    rec = ReplayStore.load(tmp_path / "a" / "replay.ntrb").records
    rows = {r[0]: r for r in read_csv(tmp_path / "a" / "replay_stats.csv")[1:]}
    episodes = np.unique(rec["episode"])
    assert int(rows["all"][1]) == len(episodes) and int(rows["all"][2]) == len(rec)
    for a in range(4):
        assert int(rows["all"][3 + a]) == int((rec["action"] == a).sum())
    assert float(rows["all"][7]) == pytest.approx(len(rec) / len(episodes))


# ---------------------------------------------------------------- eval / baseline


def _policy_cfg(tmp_path, **extra):
    base = {**TINY, "ablation": {"lookahead": False, "traj_reward": False}}
    cfg = write_cfg(tmp_path / "p.json", base)
    assert main(["train-policy", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    return from_dict({**base, "inputs": {"policy_checkpoint": str(tmp_path / "p" / "policy_final.ntck")}, **extra})


def test_eval_zero_episodes_header_only(tmp_path):
    cfg = _policy_cfg(tmp_path, eval={"episodes": 0})
    cmd_eval(cfg, make_run_dir(cfg, "eval", tmp_path / "e"))
    rows = read_csv(tmp_path / "e" / "eval_episodes.csv")
    assert rows == [["episode", "seed", "SR", "SPL", "PSC", "H-Coll", "T-SR", "T-SPL"]]


def test_eval_metrics_recomputed_from_traces(tmp_path):
    cfg = _policy_cfg(tmp_path, eval={"episodes": 3, "n_robots": 2})
    rep = cmd_eval(cfg, make_run_dir(cfg, "eval", tmp_path / "e"))
    traces = sorted((tmp_path / "e" / "traces").glob("*.jsonl"))
    assert len(traces) == 3
    again = sim.compute_metrics([sim.episodes_from_trace(t) for t in traces])
    assert again.as_row() == rep.as_row()
    assert all(len(ep) == 2 for ep in rep.episodes)


def test_baseline_empty_map_and_determinism(tmp_path):
    cfg = from_dict({**TINY, "scene": {"rooms": 1, "obstacles": 0}, "n_humans": 0, "eval": {"episodes": 10}})
    rep, _ = greedy_episodes(cfg, 0, 10)
    assert rep.SR == 100.0 and rep.SPL > 90
    a = cmd_baseline(cfg, make_run_dir(cfg, "b", tmp_path / "a"))
    b = cmd_baseline(cfg, make_run_dir(cfg, "b", tmp_path / "b"))
    assert a.as_row() == b.as_row()
    assert (tmp_path / "a" / "baseline_episodes.csv").read_bytes() == (tmp_path / "b" / "baseline_episodes.csv").read_bytes()


# ---------------------------------------------------------------- ablation


def test_ablation_table_format(tmp_path):
    cfg = from_dict({**TINY, "eval": {"episodes": 2, "n_robots": 2}})
    table = cmd_ablate(cfg, make_run_dir(cfg, "ablate", tmp_path / "a"))
    rows = read_csv(tmp_path / "a" / "ablation.csv")
    assert rows[0] == ["config", "lookahead", "traj_reward", "seed", "SR", "SPL", "PSC", "H-Coll", "T-SR", "T-SPL"]
    assert len(rows) - 1 == 3 * cfg.n_seeds + 3 == len(table)
    flags = {(r[0], r[1], r[2]) for r in rows[1:]}
    assert flags == {("base", "0", "0"), ("+LookH", "1", "0"), ("+LookH+TrajR", "1", "1")}
    assert [r[3] for r in rows[-3:]] == ["median"] * 3
