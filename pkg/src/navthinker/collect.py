"""Episode runners: scripted warm-up policy, greedy geodesic-descent baseline and
conversion of simulator episodes into replay records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import sim
from .replay import HORIZON, ReplayStore, TransitionRecord, human_futures
from .seeding import derive_seed
from .sim.env import _forward_blocked
from .sim.pedestrians import social_force_step


@dataclass
class SimSetup:
    scene: sim.SceneConfig = field(default_factory=sim.SceneConfig)
    n_robots: int = 1
    n_humans: int = 4
    env: sim.EnvConfig = field(default_factory=sim.EnvConfig)


def episode_seed(master: int, kind: str, index: int) -> int:
    return derive_seed(master, "episode", kind, index) % (1 << 63)


def make_episode(setup: SimSetup, seed: int):
    scene = sim.generate_scene(seed, setup.scene)
    return sim.reset(scene, setup.n_robots, setup.n_humans, seed, setup.env)


def smooth_geodesic(scene: sim.Scene, f: np.ndarray, p) -> float:
    """Sub-cell geodesic estimate: min over nearby cells of field value plus straight-line offset."""
    ix, iy = scene.cell(p)
    ny, nx = f.shape
    res = scene.resolution
    best = math.inf
    for dy in (-2, -1, 0, 1, 2):
        for dx in (-2, -1, 0, 1, 2):
            x, y = ix + dx, iy + dy
            if 0 <= x < nx and 0 <= y < ny and np.isfinite(f[y, x]) and not scene.grid[y, x]:
                best = min(best, f[y, x] + math.hypot(p[0] - (x + 0.5) * res, p[1] - (y + 0.5) * res))
    return best


def greedy_action(state: sim.EpisodeState, i: int) -> int:
    """Action whose one-step outcome (turns followed by a forward step) is closest to the goal.

    Humans only matter through blocking. Ties go to the lowest action id.
    """
    r = state.robots[i]
    cfg = state.config
    if math.hypot(*(r.goal - r.position)) <= cfg.success_radius:
        return sim.STOP
    f = state.goal_fields[i]
    scores = []
    for a, dth in ((sim.FORWARD, 0.0), (sim.TURN_LEFT, cfg.turn_angle), (sim.TURN_RIGHT, -cfg.turn_angle)):
        th = r.heading + dth
        new = r.position + cfg.forward_step * np.array([math.cos(th), math.sin(th)])
        if _forward_blocked(state, i, new):
            scores.append(math.inf)
        else:
            scores.append(smooth_geodesic(state.scene, f, new))
    if not np.isfinite(scores).any():
        return sim.TURN_LEFT
    return int(np.argmin(scores))


def scripted_policy(epsilon: float) -> Callable:
    """Random+greedy mixture used to seed the replay store."""

    def act(state, obs, rng):
        out = []
        for i, r in enumerate(state.robots):
            if r.done:
                out.append(None)
            elif rng.random() < epsilon:
                out.append(int(rng.choice(3, p=[0.5, 0.25, 0.25])))
            else:
                out.append(greedy_action(state, i))
        return out

    return act


def greedy_policy(state, obs, rng):
    return [None if r.done else greedy_action(state, i) for i, r in enumerate(state.robots)]


@dataclass
class EpisodeRun:
    state: sim.EpisodeState
    log: sim.EpisodeLog
    steps: list = field(default_factory=list)  # (observations before step, actions, StepResult)
    human_track: list = field(default_factory=list)  # (n_humans, 2) per tick, extended T ticks past the end


def run_episode(setup: SimSetup, seed: int, policy: Callable, rng, extend_humans: bool = True,
                on_step: Callable | None = None) -> EpisodeRun:
    state, obs = make_episode(setup, seed)
    run = EpisodeRun(state, sim.EpisodeLog(state))
    run.human_track.append(np.array([h.position for h in state.humans]).reshape(-1, 2))
    while not state.all_done:
        actions = policy(state, obs, rng)
        res = sim.step(state, actions)
        if on_step is not None:
            on_step(state, obs, actions, res)
        run.log.record(state, actions, res)
        run.steps.append((obs, actions, res))
        run.human_track.append(np.array([h.position for h in state.humans]).reshape(-1, 2))
        obs = [o if o is not None else prev for o, prev in zip(res.observations, obs)]
    if extend_humans:
        humans = state.humans
        for _ in range(HORIZON):
            humans = social_force_step(humans, state.scene, [], state.config.dt)
            run.human_track.append(np.array([h.position for h in humans]).reshape(-1, 2))
    return run


def episode_records(run: EpisodeRun, robot: int, episode_id: int) -> list[TransitionRecord]:
    """Replay records for one robot: record t pairs o_t with a_t and its task reward."""
    recs = []
    track = run.human_track
    active = [k for k, (_, acts, _) in enumerate(run.steps) if acts[robot] is not None]
    for t, k in enumerate(active):
        obs, acts, res = run.steps[k]
        o = obs[robot]
        fut = np.stack(track[k + 1:k + 1 + HORIZON]) if len(track[0]) else np.zeros((HORIZON, 0, 2))
        futures, now, bits = human_futures(fut, track[k], o.pose)
        recs.append(TransitionRecord(
            episode=episode_id, t=t, depth=o.depth, action=int(acts[robot]),
            reward_task=float(res.reward_terms[robot].task), pose=o.pose, futures=futures,
            valid=bits, done=bool(res.done[robot]), humans=now))
    return recs


def collect(store: ReplayStore, setup: SimSetup, n_episodes: int, master_seed: int, epsilon: float = 0.5,
            policy: Callable | None = None, first_id: int = 0) -> int:
    """Roll out ``n_episodes`` and append one replay episode per robot. Returns the next free id."""
    eid = first_id
    for k in range(n_episodes):
        seed = episode_seed(master_seed, "collect", k)
        rng = np.random.default_rng(derive_seed(master_seed, "collect-actions", k))
        run = run_episode(setup, seed, policy or scripted_policy(epsilon), rng)
        for i in range(setup.n_robots):
            recs = episode_records(run, i, eid)
            if recs:
                store.append_episode(recs)
            eid += 1
    return eid
