"""Scripted constant-velocity toy world for world-model sanity runs.

The scan is a phase-shifted sinusoid whose phase advances at a per-episode
constant rate plus an action-dependent offset; one human drifts at constant
velocity in the robot frame.
"""

from __future__ import annotations

import numpy as np

from .replay import HORIZON, N_HUMANS, ReplayStore, TransitionRecord

ACTION_SHIFT = np.array([0.0, 0.25, -0.25, 0.0])


def toy_episode(rng, episode_id: int, length: int) -> list[TransitionRecord]:
    omega = rng.uniform(-0.3, 0.3)
    phase = rng.uniform(0, 2 * np.pi)
    p0 = rng.uniform(-3, 3, size=2)
    v = rng.uniform(-0.2, 0.2, size=2)
    rays = np.arange(64) / 64.0
    recs = []
    for t in range(length):
        a = int(rng.integers(4))
        depth = 0.5 + 0.3 * np.sin(2 * np.pi * 3 * rays + phase)
        futures = np.zeros((N_HUMANS, HORIZON, 2))
        humans = np.zeros((N_HUMANS, 2))
        humans[0] = p0 + v * t
        futures[0] = p0 + v * (t + 1 + np.arange(HORIZON))[:, None]
        recs.append(TransitionRecord(episode_id, t, depth, a, float(-abs(omega)), np.zeros(3), futures,
                                     1, t == length - 1, humans))
        phase += omega + ACTION_SHIFT[a]
    return recs


def constant_velocity_store(n_episodes: int, length: int = 40, seed: int = 0) -> ReplayStore:
    rng = np.random.default_rng(seed)
    store = ReplayStore()
    for e in range(n_episodes):
        store.append_episode(toy_episode(rng, e, length))
    return store
