"""Social-force pedestrians: goal attraction plus exponential repulsion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import disc_hits_wall, nearest_wall_point

HUMAN_RADIUS = 0.3
ROBOT_RADIUS = 0.2
A_REP = 2.0  # m/s^2
B_REP = 0.3  # m
TAU = 0.5  # s
SPEED_CAP = 1.2
WAYPOINT_TOL = 0.3
WALL_RANGE = 2.0  # walls farther than this exert no force


@dataclass
class HumanState:
    position: np.ndarray
    velocity: np.ndarray
    waypoints: np.ndarray  # (k, 2), visited cyclically
    current_waypoint: int
    preferred_speed: float
    radius: float = HUMAN_RADIUS

    def copy(self) -> HumanState:
        return HumanState(self.position.copy(), self.velocity.copy(), self.waypoints,
                          self.current_waypoint, self.preferred_speed, self.radius)


def social_forces(humans: list[HumanState], scene, robot_positions) -> np.ndarray:
    """Accelerations (n, 2) acting on each human."""
    n = len(humans)
    acc = np.zeros((n, 2))
    if n == 0:
        return acc
    pos = np.array([h.position for h in humans])
    robots = np.asarray(robot_positions, dtype=float).reshape(-1, 2)
    for i, h in enumerate(humans):
        to_wp = h.waypoints[h.current_waypoint] - h.position
        dist = np.hypot(*to_wp)
        desired = to_wp / dist * h.preferred_speed if dist > 1e-9 else np.zeros(2)
        a = (desired - h.velocity) / TAU
        for j in range(n):
            if j != i:
                a = a + _repulsion(h.position, pos[j], h.radius + humans[j].radius)
        for r in robots:
            a = a + _repulsion(h.position, r, h.radius + ROBOT_RADIUS)
        wx, wy, wd = nearest_wall_point(scene.grid, scene.resolution, h.position[0], h.position[1], WALL_RANGE)
        if np.isfinite(wd):
            a = a + _repulsion(h.position, np.array([wx, wy]), h.radius)
        acc[i] = a
    return acc


def _repulsion(p, q, r_sum):
    diff = p - q
    d = np.hypot(*diff)
    if d < 1e-9:
        return np.zeros(2)
    return A_REP * np.exp((r_sum - d) / B_REP) * diff / d


def social_force_step(humans: list[HumanState], scene, robot_positions, dt: float = 0.25) -> list[HumanState]:
    """Advance every human by one explicit-Euler step; returns new states.

    Moves that would overlap a wall fall back to axis-aligned sliding, then to
    standing still.
    """
    acc = social_forces(humans, scene, robot_positions)
    out = []
    for h, a in zip(humans, acc):
        h = h.copy()
        v = h.velocity + a * dt
        speed = np.hypot(*v)
        cap = SPEED_CAP * h.preferred_speed
        if speed > cap:
            v = v * (cap / speed)
        new = h.position + v * dt
        if disc_hits_wall(scene.grid, scene.resolution, new[0], new[1], h.radius):
            moved = False
            for axis in (0, 1):
                vv = np.zeros(2)
                vv[axis] = v[axis]
                cand = h.position + vv * dt
                if not disc_hits_wall(scene.grid, scene.resolution, cand[0], cand[1], h.radius):
                    new, v, moved = cand, vv, True
                    break
            if not moved:
                new, v = h.position.copy(), np.zeros(2)
        h.position, h.velocity = new, v
        if np.hypot(*(h.waypoints[h.current_waypoint] - new)) < WAYPOINT_TOL:
            h.current_waypoint = (h.current_waypoint + 1) % len(h.waypoints)
        out.append(h)
    return out
