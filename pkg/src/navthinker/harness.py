"""Pipeline commands: collect, train-wm, train-policy, eval, ablate and the greedy baseline."""

from __future__ import annotations

import json
import logging
import platform
import time
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__, sim
from .collect import episode_records, episode_seed, greedy_policy, run_episode
from .collect import collect as collect_episodes
from .config import RunConfig
from .policy import PolicyNet
from .ppo_train import Ablation, Agent, Memory, evaluate_policy, train_policy
from .replay import ReplayStore
from .seeding import derive_seed
from .wm_train import _write_csv, evaluate_wm, train_wm
from .world_model import WorldModel

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["SR", "SPL", "PSC", "H-Coll", "T-SR", "T-SPL"]
EPISODE_COLUMNS = ["episode", "seed"] + METRIC_COLUMNS
WM_REPORT_COLUMNS = ["model", "cos_sim", "depth_rmse", "traj_ade", "traj_fde", "baseline_ade", "baseline_fde",
                     "windows"]
ROWS = [("base", Ablation(False, False)), ("+LookH", Ablation(True, False)), ("+LookH+TrajR", Ablation(True, True))]


class PrerequisiteError(RuntimeError):
    pass


class RunDirExistsError(RuntimeError):
    pass


def _u32(x: int) -> int:
    return x % (1 << 32)


def versions() -> dict[str, str]:
    return {"navthinker": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def make_run_dir(cfg: RunConfig, command: str, out=None) -> Path:
    """Fresh run directory holding the resolved config, seed and library versions."""
    if out is not None:
        path = Path(out)
    else:
        path = Path(cfg.out_dir) / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}-seed{cfg.seed}"
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise RunDirExistsError(f"refusing to overwrite existing run directory {path}")
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.json").write_text(cfg.dumps())
    meta = {"command": command, "seed": cfg.seed, "versions": versions()}
    (path / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise PrerequisiteError(f"missing prerequisite: {what} path not set in config inputs")
    p = Path(path)
    if not p.is_file():
        raise PrerequisiteError(f"missing prerequisite: {what} not found at {p}")
    return p


def _episode_rows(rows: list[dict], report: sim.MetricsReport) -> list[dict]:
    if not rows:
        return []
    return rows + [{"episode": "all", "seed": "", **report.as_row()}]


# ---------------------------------------------------------------- stages


def collect_store(cfg: RunConfig, master: int) -> ReplayStore:
    store = ReplayStore()
    collect_episodes(store, cfg.sim_setup(), cfg.collect_episodes, derive_seed(master, "collect"),
                     cfg.collect_epsilon)
    return store


def fit_world_model(cfg: RunConfig, store: ReplayStore, master: int, out_dir=None) -> WorldModel:
    model = WorldModel(cfg.world_model, seed=_u32(derive_seed(master, "wm-init")))
    train_wm(store, model, cfg.wm_train_config(), seed=derive_seed(master, "wm-train"), out_dir=out_dir)
    return model


def wm_report_rows(cfg: RunConfig, store: ReplayStore, model: WorldModel, master: int) -> list[dict]:
    fresh = WorldModel(cfg.world_model, seed=_u32(derive_seed(master, "wm-init")))
    rows = []
    for name, m in (("untrained", fresh), ("trained", model)):
        r = evaluate_wm(m, store, cfg.wm_train.eval_episodes)
        rows.append({"model": name, "cos_sim": r.cos_sim, "depth_rmse": r.depth_rmse, "traj_ade": r.traj_ade,
                     "traj_fde": r.traj_fde, "baseline_ade": r.baseline_ade, "baseline_fde": r.baseline_fde,
                     "windows": r.windows})
    return rows


def _stats_rows(store: ReplayStore) -> list[dict]:
    rows = []
    for split in (None, "train", "heldout"):
        s = store.stats(split)
        row = {"split": split or "all", "episodes": s["episodes"], "transitions": s["transitions"]}
        row.update({f"action_{a}": int(c) for a, c in enumerate(s["action_histogram"])})
        row["mean_episode_length"] = s["mean_episode_length"]
        rows.append(row)
    return rows


# ---------------------------------------------------------------- commands


def cmd_collect(cfg: RunConfig, run_dir: Path) -> ReplayStore:
    store = collect_store(cfg, cfg.seed)
    store.save(run_dir / "replay.ntrb")
    rows = _stats_rows(store)
    _write_csv(run_dir / "replay_stats.csv", list(rows[0]), rows)
    return store


def cmd_train_wm(cfg: RunConfig, run_dir: Path) -> WorldModel:
    store = ReplayStore.load(_require(cfg.inputs.replay, "replay file"))
    model = fit_world_model(cfg, store, cfg.seed, out_dir=run_dir)
    if store.episodes("heldout"):
        _write_csv(run_dir / "wm_report.csv", WM_REPORT_COLUMNS, wm_report_rows(cfg, store, model, cfg.seed))
    return model


def _load_wm(cfg: RunConfig) -> WorldModel:
    return WorldModel.load(_require(cfg.inputs.wm_checkpoint, "world-model checkpoint"), cfg.world_model)


def cmd_train_policy(cfg: RunConfig, run_dir: Path):
    flags = cfg.ablation
    wm = _load_wm(cfg) if flags.needs_world_model else None
    run = train_policy(cfg.sim_setup(), wm, cfg.ppo, cfg.shaping, flags, cfg.schedule.policy_steps,
                       seed=derive_seed(cfg.seed, "policy"), out_dir=run_dir, eval_episodes=cfg.eval.episodes,
                       eval_every=cfg.eval.every_updates, eval_setup=cfg.eval_setup())
    _write_csv(run_dir / "policy_metrics.csv", METRIC_COLUMNS, [run.report.as_row()])
    return run


def cmd_eval(cfg: RunConfig, run_dir: Path) -> sim.MetricsReport:
    flags = cfg.ablation
    ckpt = _require(cfg.inputs.policy_checkpoint, "policy checkpoint")
    wm = _load_wm(cfg) if flags.needs_world_model else None
    net = PolicyNet.load(ckpt, extent=cfg.scene.width)
    agent = Agent(net, wm, flags, cfg.shaping)
    res = evaluate_policy(agent, cfg.eval_setup(), derive_seed(cfg.seed, "eval"), cfg.eval.episodes,
                          trace_dir=run_dir / "traces")
    _write_csv(run_dir / "eval_episodes.csv", EPISODE_COLUMNS, _episode_rows(res.rows, res.report))
    return res.report


def greedy_episodes(cfg: RunConfig, master: int, episodes: int, trace_dir=None):
    setup = cfg.eval_setup()
    rng = np.random.default_rng(derive_seed(master, "greedy"))
    results, rows = [], []
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    for k in range(episodes):
        seed = episode_seed(master, "eval", k)
        run = run_episode(setup, seed, greedy_policy, rng, extend_humans=False)
        robots = run.log.robot_episodes(run.state)
        results.append(robots)
        rows.append({"episode": k, "seed": seed, **sim.compute_metrics([robots]).as_row()})
        if trace_dir is not None:
            run.log.write(Path(trace_dir) / f"episode_{k:05d}.jsonl")
    return sim.compute_metrics(results), rows


def cmd_baseline(cfg: RunConfig, run_dir: Path) -> sim.MetricsReport:
    report, rows = greedy_episodes(cfg, derive_seed(cfg.seed, "eval"), cfg.eval.episodes, run_dir / "traces")
    _write_csv(run_dir / "baseline_episodes.csv", EPISODE_COLUMNS, _episode_rows(rows, report))
    return report


def ablation_seed(cfg: RunConfig, index: int) -> int:
    return derive_seed(cfg.seed, "ablate", index)


def run_ablation_seed(cfg: RunConfig, index: int, out_dir=None) -> tuple[list[dict], list[dict]]:
    """Collect, fit the world model and train/evaluate the three ablation rows for one seed."""
    master = ablation_seed(cfg, index)
    sub = Path(out_dir) / f"seed{index}" if out_dir is not None else None
    store = collect_store(cfg, master)
    wm = fit_world_model(cfg, store, master, out_dir=sub / "wm" if sub else None)
    wm_rows = wm_report_rows(cfg, store, wm, master) if store.episodes("heldout") else []
    nets: dict[str, PolicyNet | None] = {name: None for name, _ in ROWS}
    results: dict[str, sim.MetricsReport] = {}
    for rnd in range(cfg.schedule.interleave_rounds + 1):
        if rnd > 0:
            # later rounds add on-policy data from the full agent before refitting the world model
            agent = Agent(nets[ROWS[-1][0]], wm, ROWS[-1][1], cfg.shaping)
            _collect_with_agent(cfg, store, agent, derive_seed(master, "interleave", rnd))
            train_wm(store, wm, cfg.wm_train_config(), seed=derive_seed(master, "wm-train", rnd))
        for name, flags in ROWS:
            run = train_policy(cfg.sim_setup(), wm, cfg.ppo, cfg.shaping, flags, cfg.schedule.policy_steps,
                               seed=derive_seed(master, "policy", rnd),
                               out_dir=sub / name if sub else None, eval_episodes=cfg.eval.episodes,
                               eval_every=cfg.eval.every_updates, eval_setup=cfg.eval_setup(), init=nets[name])
            nets[name] = run.net
            results[name] = run.report
    rows = []
    for name, flags in ROWS:
        rows.append({"config": name, "lookahead": int(flags.lookahead), "traj_reward": int(flags.traj_reward),
                     "seed": master, **results[name].as_row()})
    for r in wm_rows:
        r["seed"] = master
    return rows, wm_rows


def _collect_with_agent(cfg: RunConfig, store: ReplayStore, agent: Agent, master: int) -> None:
    rng = np.random.default_rng(derive_seed(master, "actions"))
    eid = max(store.episodes(), default=-1) + 1
    setup = cfg.sim_setup()
    for k in range(cfg.collect_episodes):
        mems: list[Memory] = []

        def policy(state, obs, _rng):
            if not mems:
                mems.extend(Memory() for _ in state.robots)
            active = [i for i, r in enumerate(state.robots) if not r.done]
            dec = agent.decide([mems[i] for i in active], [obs[i] for i in active], "sample", rng)
            out = [None] * len(state.robots)
            for j, i in enumerate(active):
                out[i] = int(dec.actions[j])
            return out

        run = run_episode(setup, episode_seed(master, "collect", k), policy, rng)
        for i in range(setup.n_robots):
            recs = episode_records(run, i, eid)
            if recs:
                store.append_episode(recs)
            eid += 1


def ablation_columns(cfg: RunConfig) -> list[str]:
    cols = ["config", "lookahead", "traj_reward", "seed", "SR", "SPL", "PSC", "H-Coll"]
    if (cfg.eval.n_robots or cfg.n_robots) > 1:
        cols += ["T-SR", "T-SPL"]
    return cols


def median_rows(rows: list[dict], columns: list[str]) -> list[dict]:
    out = []
    metrics = [c for c in columns if c in METRIC_COLUMNS]
    for name, flags in ROWS:
        mine = [r for r in rows if r["config"] == name]
        med = {"config": name, "lookahead": int(flags.lookahead), "traj_reward": int(flags.traj_reward),
               "seed": "median"}
        med.update({m: float(np.median([r[m] for r in mine])) for m in metrics})
        out.append(med)
    return out


def cmd_ablate(cfg: RunConfig, run_dir: Path) -> list[dict]:
    columns = ablation_columns(cfg)
    rows, wm_rows = [], []
    for i in range(cfg.n_seeds):
        r, w = run_ablation_seed(cfg, i, run_dir)
        rows += [{c: row[c] for c in columns} for row in r]
        wm_rows += w
        log.info("ablation seed %d done: %s", i, r)
    table = rows + median_rows(rows, columns)
    _write_csv(run_dir / "ablation.csv", columns, table)
    if wm_rows:
        _write_csv(run_dir / "ablation_wm.csv", ["seed"] + WM_REPORT_COLUMNS, wm_rows)
    return table


COMMANDS = {
    "collect": cmd_collect,
    "train-wm": cmd_train_wm,
    "train-policy": cmd_train_policy,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "baseline": cmd_baseline,
}
