"""Policy rollouts (training and evaluation) and the PPO training loop."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grad as G
from . import sim
from .collect import SimSetup, episode_seed, make_episode
from .policy import (
    HIDDEN,
    LOOK_DIM,
    PolicyNet,
    PPOConfig,
    RolloutBuffer,
    ShapingConfig,
    lookahead_latents,
    obs_inputs,
    pool_lookahead,
    ppo_update,
    select_actions,
    traj_penalty,
)
from .seeding import derive_seed
from .wm_train import _write_csv
from .world_model import WorldModel

log = logging.getLogger(__name__)

CURVE_COLUMNS = ["env_steps", "SR", "SPL", "PSC", "H-Coll", "mean_reward", "policy_loss", "value_loss", "entropy"]
EVAL_COLUMNS = ["env_steps", "SR", "SPL", "PSC", "H-Coll", "T-SR", "T-SPL"]


@dataclass(frozen=True)
class Ablation:
    lookahead: bool = True
    traj_reward: bool = True

    @property
    def needs_world_model(self) -> bool:
        return self.lookahead or self.traj_reward


@dataclass
class Memory:
    """Per-robot recurrent state and world-model context."""

    hidden: np.ndarray = field(default_factory=lambda: np.zeros(HIDDEN))
    frames: list = field(default_factory=list)
    actions: list = field(default_factory=list)


@dataclass
class Decision:
    depth: np.ndarray
    aux: np.ndarray
    goal: np.ndarray
    hidden: np.ndarray  # entry state
    look: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    chosen: np.ndarray | None  # imagined latent of the chosen action, (B, P, D)
    latents: np.ndarray | None = None  # imagined latents of every action, (B, 4, P, D)


class Agent:
    """Policy plus optional world model; every robot keeps its own Memory and nothing else is shared."""

    def __init__(self, net: PolicyNet, wm: WorldModel | None = None, flags: Ablation = Ablation(),
                 shaping: ShapingConfig = ShapingConfig()):
        if flags.needs_world_model and wm is None:
            raise ValueError("lookahead or trajectory shaping needs a world model")
        self.net, self.wm, self.flags, self.shaping = net, wm, flags, shaping
        self.look_log: list[float] = []  # max |l_t| per decision batch when lookahead is off

    def decide(self, mems: list[Memory], observations: list, mode: str, rng) -> Decision:
        inputs = [obs_inputs(o, self.net.extent) for o in observations]
        depth = np.stack([x[0] for x in inputs])
        aux = np.stack([x[1] for x in inputs])
        goal = np.stack([x[2] for x in inputs])
        entry = np.stack([m.hidden for m in mems])
        B = len(mems)
        latents = None
        if self.wm is not None and self.flags.needs_world_model:
            win = self.wm.cfg.context + 1
            z = self.wm.encoder(depth)
            ctx = []
            for m, zi in zip(mems, z):
                m.frames = (m.frames + [zi])[-win:]
                m.actions = m.actions[-(len(m.frames) - 1):] if len(m.frames) > 1 else []
                ctx.append((np.stack(m.frames), m.actions))
            latents = lookahead_latents(self.wm, ctx)
        if self.flags.lookahead:
            look = pool_lookahead(latents)
        else:
            look = np.zeros((B, LOOK_DIM))
            self.look_log.append(0.0 if B == 0 else float(np.abs(look).max()))
        with G.no_grad():
            e = self.net.encode(depth, aux, entry).data
            logits, v = self.net.heads(e, look, goal)
        a, lp = select_actions(logits.data, mode, rng)
        for m, ei, ai in zip(mems, e, a):
            m.hidden = ei
            m.actions.append(int(ai))
        chosen = latents[np.arange(B), a] if latents is not None else None
        return Decision(depth, aux, goal, entry, look, a, lp, v.data, chosen, latents)

    def shaped(self, terms: sim.RewardTerms, chosen, n_humans: int) -> sim.RewardTerms:
        if not self.flags.traj_reward or chosen is None:
            return terms
        with G.no_grad():
            xi = self.wm.decode_traj(chosen).data
        valid = np.arange(self.wm.cfg.n_humans) < n_humans
        return terms.with_traj(traj_penalty(xi, valid, self.shaping))


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    report: sim.MetricsReport
    rows: list[dict]  # one per episode


def _episode_row(k: int, seed: int, robots: list[sim.RobotEpisode]) -> dict:
    rep = sim.compute_metrics([robots])
    return {"episode": k, "seed": seed, **rep.as_row()}


def evaluate_policy(agent: Agent, setup: SimSetup, master_seed: int, episodes: int, n_parallel: int = 8,
                    trace_dir=None, stream: str = "eval") -> EvalResult:
    """Argmax rollouts on held-out episode seeds; robots act independently with their own memory."""
    rng = np.random.default_rng(derive_seed(master_seed, stream, "policy-rng"))
    results: dict[int, list[sim.RobotEpisode]] = {}
    seeds = {k: episode_seed(master_seed, stream, k) for k in range(episodes)}
    trace = Path(trace_dir) if trace_dir is not None else None
    if trace is not None:
        trace.mkdir(parents=True, exist_ok=True)
    for lo in range(0, episodes, n_parallel):
        batch = list(range(lo, min(episodes, lo + n_parallel)))
        runs = []
        for k in batch:
            state, obs = make_episode(setup, seeds[k])
            runs.append([k, state, obs, [Memory() for _ in state.robots], sim.EpisodeLog(state)])
        while any(not r[1].all_done for r in runs):
            slots = [(ri, i) for ri, r in enumerate(runs) for i, rb in enumerate(r[1].robots) if not rb.done]
            dec = agent.decide([runs[ri][3][i] for ri, i in slots], [runs[ri][2][i] for ri, i in slots],
                               "argmax", rng)
            acts: dict[int, list] = {ri: [None] * len(runs[ri][1].robots) for ri in {s[0] for s in slots}}
            for j, (ri, i) in enumerate(slots):
                acts[ri][i] = int(dec.actions[j])
            for ri, a in acts.items():
                k, state, obs, mems, elog = runs[ri]
                res = sim.step(state, a)
                for j, (rj, i) in enumerate(slots):
                    if rj == ri and res.reward_terms[i] is not None:
                        chosen = None if dec.chosen is None else dec.chosen[j]
                        res.reward_terms[i] = agent.shaped(res.reward_terms[i], chosen, len(state.humans))
                elog.record(state, a, res)
                runs[ri][2] = [o if o is not None else p for o, p in zip(res.observations, obs)]
        for k, state, _, _, elog in runs:
            results[k] = elog.robot_episodes(state)
            if trace is not None:
                elog.write(trace / f"episode_{k:05d}.jsonl")
    order = sorted(results)
    report = sim.compute_metrics([results[k] for k in order])
    rows = [_episode_row(k, seeds[k], results[k]) for k in order]
    return EvalResult(report, rows)


# ---------------------------------------------------------------- training


@dataclass
class _Env:
    state: sim.EpisodeState
    obs: sim.Observation
    mem: Memory
    min_d: list = field(default_factory=list)
    hit: bool = False


@dataclass
class PolicyRun:
    net: PolicyNet
    curve: list[dict]
    evals: list[dict]
    report: sim.MetricsReport
    updates: int
    env_steps: int
    max_abs_look: float = 0.0
    max_r_traj: float = 0.0


def train_policy(setup: SimSetup, wm: WorldModel | None, ppo: PPOConfig = PPOConfig(),
                 shaping: ShapingConfig = ShapingConfig(), flags: Ablation = Ablation(), total_steps: int = 100_000,
                 seed: int = 0, out_dir=None, eval_episodes: int = 50, eval_every: int = 0,
                 eval_setup: SimSetup | None = None, init: PolicyNet | None = None) -> PolicyRun:
    """PPO with per-step lookahead and optional trajectory shaping. Training episodes are single-robot;
    evaluation uses ``eval_setup`` (default: ``setup``) and may hold several robots. ``init`` continues
    training an existing network in place."""
    train_setup = SimSetup(setup.scene, 1, setup.n_humans, setup.env)
    eval_setup = eval_setup or setup
    net = init if init is not None else PolicyNet(derive_seed(seed, "policy-init") % (1 << 32),
                                                  extent=setup.scene.width)
    wm_sum = wm.checksum() if wm is not None else None
    agent = Agent(net, wm if flags.needs_world_model else None, flags, shaping)
    opt = G.Adam(net.parameters(), lr=ppo.lr)
    act_rng = np.random.default_rng(derive_seed(seed, "policy-actions"))
    upd_rng = np.random.default_rng(derive_seed(seed, "ppo-minibatches"))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    per_update = ppo.n_envs * ppo.rollout_len
    n_updates = total_steps // per_update
    counter = 0

    def fresh() -> _Env:
        nonlocal counter
        state, obs = make_episode(train_setup, episode_seed(seed, "train", counter))
        counter += 1
        return _Env(state, obs[0], Memory())

    envs = [fresh() for _ in range(ppo.n_envs)]
    curve, evals = [], []
    env_steps = 0
    max_r_traj = 0.0

    def run_eval(tag_steps: int) -> sim.MetricsReport:
        res = evaluate_policy(agent, eval_setup, seed, eval_episodes)
        evals.append({"env_steps": tag_steps, **res.report.as_row()})
        log.info("eval at %d steps: %s", tag_steps, res.report.as_row())
        return res.report

    for update in range(1, n_updates + 1):
        buf = RolloutBuffer(ppo.n_envs, ppo.rollout_len)
        finished: list[sim.RobotEpisode] = []
        for _t in range(ppo.rollout_len):
            dec = agent.decide([e.mem for e in envs], [e.obs for e in envs], "sample", act_rng)
            rewards = np.zeros(ppo.n_envs)
            r_traj = np.zeros(ppo.n_envs)
            dones = np.zeros(ppo.n_envs, dtype=bool)
            for j, env in enumerate(envs):
                res = sim.step(env.state, [int(dec.actions[j])])
                chosen = None if dec.chosen is None else dec.chosen[j]
                terms = agent.shaped(res.reward_terms[0], chosen, len(env.state.humans))
                rewards[j], r_traj[j] = terms.total, terms.r_traj
                env.min_d.append(res.info[0]["min_human_dist"])
                env.hit |= bool(res.info[0]["human_collision"])
                dones[j] = res.done[0]
                if dones[j]:
                    r = env.state.robots[0]
                    finished.append(sim.RobotEpisode(r.success, r.shortest, r.path_length, env.min_d, env.hit))
                    envs[j] = fresh()
                else:
                    env.obs = res.observations[0]
            max_r_traj = max(max_r_traj, float(r_traj.max()))
            buf.add(depth=dec.depth, aux=dec.aux, goal=dec.goal, hidden=dec.hidden, look=dec.look,
                    actions=dec.actions, logp=dec.logp, values=dec.values, rewards=rewards, r_traj=r_traj,
                    dones=dones)
            env_steps += ppo.n_envs
        boot = _bootstrap(agent, envs)
        buf.seal(boot, ppo.gamma, ppo.gae_lambda)
        stats = ppo_update(buf, net, opt, ppo, upd_rng)
        m = sim.compute_metrics([[r] for r in finished])
        nan = float("nan")
        curve.append({
            "env_steps": env_steps,
            "SR": m.SR if finished else nan, "SPL": m.SPL if finished else nan,
            "PSC": m.PSC if finished else nan, "H-Coll": m.H_Coll if finished else nan,
            "mean_reward": float(buf.rewards.mean()), "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss, "entropy": stats.entropy,
        })
        if update % 10 == 0:
            log.info("update %d/%d: %s", update, n_updates, curve[-1])
        if eval_every and update % eval_every == 0 and update < n_updates:
            run_eval(env_steps)
        if wm_sum is not None and wm.checksum() != wm_sum:
            raise RuntimeError("world-model parameters changed during PPO")
    report = run_eval(env_steps)
    if out is not None:
        _write_csv(out / "policy_curve.csv", CURVE_COLUMNS, curve)
        _write_csv(out / "policy_eval.csv", EVAL_COLUMNS, evals)
        net.save(out / "policy_final.ntck")
    look_max = max(agent.look_log) if agent.look_log else 0.0
    return PolicyRun(net, curve, evals, report, n_updates, env_steps, look_max, max_r_traj)


def _bootstrap(agent: Agent, envs: list[_Env]) -> np.ndarray:
    """Critic value of each env's next observation, leaving every memory untouched."""
    mems = [copy.deepcopy(e.mem) for e in envs]
    look_log = list(agent.look_log)
    dec = agent.decide(mems, [e.obs for e in envs], "argmax", None)
    agent.look_log = look_log
    return dec.values
