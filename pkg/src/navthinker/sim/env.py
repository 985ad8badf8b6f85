"""Episode state, reset and step for the 2D social-navigation task."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import disc_hits_wall, raycast_kernel, segment_disc_clear, segment_point_distance
from .pedestrians import HUMAN_RADIUS, HumanState, social_force_step
from .scene import ROBOT_RADIUS, Scene

FORWARD, TURN_LEFT, TURN_RIGHT, STOP = 0, 1, 2, 3
N_ACTIONS = 4
ACTION_NAMES = ("Forward", "Turn-Left", "Turn-Right", "Stop")
GEO_CAP = 100.0  # stand-in for +inf in reward arithmetic


class EpisodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.25
    max_steps: int = 200
    forward_step: float = 0.25
    turn_angle: float = math.radians(30.0)
    fov: float = math.radians(90.0)
    n_rays: int = 64
    max_range: float = 5.0
    success_radius: float = 0.3
    success_reward: float = 2.5
    static_penalty: float = 0.05
    human_penalty: float = 0.3
    collision_dist: float = ROBOT_RADIUS + HUMAN_RADIUS
    min_geodesic: float = 3.0
    max_geodesic: float = 15.0
    spawn_separation: float = 1.0


@dataclass
class RobotState:
    position: np.ndarray
    heading: float
    goal: np.ndarray
    radius: float = ROBOT_RADIUS
    done: bool = False
    path_length: float = 0.0
    success: bool = False
    shortest: float = 0.0  # geodesic start -> goal


@dataclass
class Observation:
    depth: np.ndarray  # (64,) in [0, 1]
    goal_polar: np.ndarray  # (rho m, phi rad) in robot frame
    pose: np.ndarray  # (x, y, heading)
    prev_action: int


@dataclass
class RewardTerms:
    r_goal: float = 0.0
    r_succ: float = 0.0
    r_coll: float = 0.0
    r_traj: float = 0.0
    total: float = 0.0

    def __post_init__(self):
        self.total = self.r_goal + self.r_succ - self.r_coll - self.r_traj

    def with_traj(self, r_traj: float) -> RewardTerms:
        return RewardTerms(self.r_goal, self.r_succ, self.r_coll, float(r_traj))

    @property
    def task(self) -> float:
        return self.r_goal + self.r_succ - self.r_coll


@dataclass
class StepResult:
    observations: list  # Observation per robot, None for robots already finished
    reward_terms: list
    done: list
    info: list


@dataclass
class EpisodeState:
    scene: Scene
    robots: list[RobotState]
    humans: list[HumanState]
    config: EnvConfig
    seed: int
    t: int = 0
    prev_actions: list[int] = field(default_factory=list)
    goal_fields: list[np.ndarray] = field(default_factory=list)
    geodesic: list[float] = field(default_factory=list)

    @property
    def all_done(self) -> bool:
        return all(r.done for r in self.robots)


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def to_robot_frame(points: np.ndarray, pose) -> np.ndarray:
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    d = np.asarray(points, dtype=float) - np.array([x, y])
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def raycast_depth(scene: Scene, pose, agents=None, config: EnvConfig = EnvConfig()) -> np.ndarray:
    """Normalized depth scan; ``agents`` is an (n, 3) array of discs (x, y, r)."""
    discs = np.zeros((0, 3)) if agents is None or len(agents) == 0 else np.asarray(agents, dtype=float).reshape(-1, 3)
    return raycast_kernel(scene.grid, scene.resolution, float(pose[0]), float(pose[1]), float(pose[2]),
                          config.fov, config.n_rays, config.max_range, discs)


def _geo(state: EpisodeState, i: int) -> float:
    g = state.scene.lookup(state.goal_fields[i], state.robots[i].position)
    return min(g, GEO_CAP)


def _discs(state: EpisodeState, exclude: int) -> np.ndarray:
    rows = [(h.position[0], h.position[1], h.radius) for h in state.humans]
    rows += [(r.position[0], r.position[1], r.radius) for j, r in enumerate(state.robots) if j != exclude and not r.done]
    return np.array(rows, dtype=float).reshape(-1, 3)


def observe(state: EpisodeState, i: int) -> Observation:
    r = state.robots[i]
    pose = np.array([r.position[0], r.position[1], r.heading])
    depth = raycast_depth(state.scene, pose, _discs(state, i), state.config)
    d = r.goal - r.position
    polar = np.array([math.hypot(d[0], d[1]), wrap_angle(math.atan2(d[1], d[0]) - r.heading)])
    return Observation(depth, polar, pose, state.prev_actions[i])


def _sample_point(rng, scene: Scene, radius: float) -> np.ndarray:
    cells = scene.free_cells
    for _ in range(200):
        ix, iy = cells[rng.integers(len(cells))]
        p = (np.array([ix, iy]) + 0.5 + rng.uniform(-0.4, 0.4, size=2)) * scene.resolution
        if scene.disc_free(p, radius):
            return p
    raise EpisodeError("could not sample a free point")


def _segment_clear(scene: Scene, a, b, radius: float) -> bool:
    n = max(2, int(math.ceil(np.hypot(*(b - a)) / 0.1)) + 1)
    return segment_disc_clear(scene.grid, scene.resolution, float(a[0]), float(a[1]), float(b[0]), float(b[1]),
                              float(radius), n)


def _sample_waypoints(rng, scene: Scene, start, attempts: int = 200) -> np.ndarray | None:
    """Patrol loop of 2-4 points joined by clear segments, or None when ``start`` sits in a cramped pocket."""
    k = int(rng.integers(2, 5))
    for _ in range(attempts):
        pts = []
        prev = start
        for _j in range(k):
            for _try in range(30):
                c = _sample_point(rng, scene, HUMAN_RADIUS + 0.05)
                if np.hypot(*(c - prev)) > 1.0 and _segment_clear(scene, prev, c, HUMAN_RADIUS):
                    break
            else:
                break
            pts.append(c)
            prev = c
        if len(pts) == k and _segment_clear(scene, pts[-1], pts[0], HUMAN_RADIUS):
            return np.array(pts)
    return None


def reset(scene: Scene, n_robots: int, n_humans: int, seed: int, config: EnvConfig | None = None):
    """Sample robot start/goal pairs and patrolling humans. Returns (state, observations)."""
    cfg = config or EnvConfig()
    rng = np.random.default_rng(seed)
    for _attempt in range(200):
        spawns: list[np.ndarray] = []
        robots, fields = [], []
        ok = True
        for _ in range(n_robots):
            goal = _sample_point(rng, scene, ROBOT_RADIUS + 0.05)
            f = scene.field_from(goal)
            cand = scene.free_cells
            vals = f[cand[:, 1], cand[:, 0]]
            pool = cand[(vals >= cfg.min_geodesic) & (vals <= cfg.max_geodesic)]
            if len(pool) == 0:
                ok = False
                break
            start = None
            for _try in range(30):
                ix, iy = pool[rng.integers(len(pool))]
                p = (np.array([ix, iy]) + 0.5 + rng.uniform(-0.4, 0.4, size=2)) * scene.resolution
                g = scene.lookup(f, p)
                if (scene.disc_free(p, ROBOT_RADIUS + 0.05) and cfg.min_geodesic <= g <= cfg.max_geodesic
                        and all(np.hypot(*(p - s)) >= cfg.spawn_separation for s in spawns)):
                    start = p
                    break
            if start is None:
                ok = False
                break
            spawns.append(start)
            heading = float(rng.uniform(-math.pi, math.pi))
            robots.append(RobotState(start, heading, goal, shortest=scene.lookup(f, start)))
            fields.append(f)
        if not ok:
            continue
        humans = []
        for _ in range(n_humans):
            for _try in range(50):
                p = _sample_point(rng, scene, HUMAN_RADIUS + 0.05)
                if not all(np.hypot(*(p - s)) >= cfg.spawn_separation for s in spawns):
                    continue
                wps = _sample_waypoints(rng, scene, p)
                if wps is not None:
                    break
            else:
                ok = False
                break
            spawns.append(p)
            humans.append(HumanState(p, np.zeros(2), wps, 0, float(rng.uniform(0.5, 1.0))))
        if not ok:
            continue
        state = EpisodeState(scene, robots, humans, cfg, seed, prev_actions=[STOP] * n_robots, goal_fields=fields)
        state.geodesic = [_geo(state, i) for i in range(n_robots)]
        return state, [observe(state, i) for i in range(n_robots)]
    raise EpisodeError(f"episode sampling failed after 200 attempts (seed {seed})")


def _forward_blocked(state: EpisodeState, i: int, new: np.ndarray) -> bool:
    r = state.robots[i]
    grid, res = state.scene.grid, state.scene.resolution
    old = r.position
    for s in (0.2, 0.4, 0.6, 0.8, 1.0):
        p = old + (new - old) * s
        if disc_hits_wall(grid, res, p[0], p[1], r.radius):
            return True
    for h in state.humans:
        if segment_point_distance(old[0], old[1], new[0], new[1], h.position[0], h.position[1]) < r.radius + h.radius:
            return True
    for j, o in enumerate(state.robots):
        if j != i and not o.done:
            if segment_point_distance(old[0], old[1], new[0], new[1], o.position[0], o.position[1]) < r.radius + o.radius:
                return True
    return False


def step(state: EpisodeState, actions) -> StepResult:
    """Advance one tick. ``actions[i]`` is an action id for active robots, None for finished ones."""
    cfg = state.config
    n = len(state.robots)
    if len(actions) != n:
        raise EpisodeError(f"expected {n} actions, got {len(actions)}")
    active = [not r.done for r in state.robots]
    for i, a in enumerate(actions):
        if not active[i] and a is not None:
            raise EpisodeError(f"action supplied for finished robot {i}")
        if active[i] and a not in (FORWARD, TURN_LEFT, TURN_RIGHT, STOP):
            raise EpisodeError(f"robot {i} needs an action in 0..3, got {a!r}")
    static_hit = [False] * n
    succ = [False] * n
    # (1) robots move in index order
    for i, a in enumerate(actions):
        if not active[i]:
            continue
        r = state.robots[i]
        if a == FORWARD:
            new = r.position + cfg.forward_step * np.array([math.cos(r.heading), math.sin(r.heading)])
            if _forward_blocked(state, i, new):
                static_hit[i] = True
            else:
                r.path_length += math.hypot(new[0] - r.position[0], new[1] - r.position[1])
                r.position = new
        elif a == TURN_LEFT:
            r.heading = wrap_angle(r.heading + cfg.turn_angle)
        elif a == TURN_RIGHT:
            r.heading = wrap_angle(r.heading - cfg.turn_angle)
        else:
            r.done = True
            d = r.goal - r.position
            succ[i] = math.hypot(d[0], d[1]) <= cfg.success_radius
            r.success = succ[i]
        state.prev_actions[i] = int(a)
    # (2) humans react to robots present during this tick
    present = [state.robots[i].position for i in range(n) if active[i]]
    state.humans = social_force_step(state.humans, state.scene, present, cfg.dt)
    state.t += 1
    obs, terms, dones, infos = [None] * n, [None] * n, [True] * n, [None] * n
    for i in range(n):
        if not active[i]:
            continue
        r = state.robots[i]
        # (3) collisions
        dists = [math.hypot(h.position[0] - r.position[0], h.position[1] - r.position[1]) for h in state.humans]
        min_d = min(dists) if dists else math.inf
        human_hit = min_d < cfg.collision_dist
        # (4) rewards
        g_prev = state.geodesic[i]
        g_now = _geo(state, i)
        state.geodesic[i] = g_now
        terms[i] = RewardTerms(
            r_goal=g_prev - g_now,
            r_succ=cfg.success_reward if succ[i] else 0.0,
            r_coll=cfg.static_penalty * static_hit[i] + cfg.human_penalty * human_hit,
        )
        if state.t >= cfg.max_steps:
            r.done = True
        infos[i] = {"human_collision": human_hit, "static_collision": static_hit[i], "min_human_dist": min_d,
                    "geodesic_to_goal": g_now, "success": r.success}
    # (5) observations after finished robots leave the scene
    for i in range(n):
        if active[i]:
            obs[i] = observe(state, i)
            dones[i] = state.robots[i].done
    return StepResult(obs, terms, dones, infos)
