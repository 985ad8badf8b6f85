from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .geometry import disc_hits_wall, distance_field

RESOLUTION = 0.1
ROBOT_RADIUS = 0.2


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    width: float = 12.0
    height: float = 12.0
    rooms: int = 3
    corridor_width: float = 1.0
    obstacles: int = 3
    wall_cells: int = 2
    min_room: float = 2.5

    def __post_init__(self):
        if not 1 <= self.rooms <= 5:
            raise ValueError(f"rooms must be in 1..5, got {self.rooms}")
        if self.corridor_width < 1.0:
            raise ValueError(f"corridor_width must be >= 1.0 m, got {self.corridor_width}")


@dataclass(eq=False)
class Scene:
    grid: np.ndarray  # bool, True = wall, indexed [iy, ix]
    seed: int = 0
    resolution: float = RESOLUTION
    _fields: dict = field(default_factory=dict, repr=False)

    @property
    def width(self) -> float:
        return self.grid.shape[1] * self.resolution

    @property
    def height(self) -> float:
        return self.grid.shape[0] * self.resolution

    def cell(self, p) -> tuple[int, int]:
        return int(np.floor(p[0] / self.resolution)), int(np.floor(p[1] / self.resolution))

    def is_free(self, p) -> bool:
        ix, iy = self.cell(p)
        ny, nx = self.grid.shape
        return 0 <= ix < nx and 0 <= iy < ny and not self.grid[iy, ix]

    def disc_free(self, p, r: float) -> bool:
        return not disc_hits_wall(self.grid, self.resolution, float(p[0]), float(p[1]), float(r))

    @cached_property
    def inflated(self) -> np.ndarray:
        """Cells whose centre lies within robot radius of a wall cell's area."""
        edt = ndimage.distance_transform_edt(~self.grid) * self.resolution
        return edt - 0.5 * self.resolution < ROBOT_RADIUS

    @cached_property
    def free_cells(self) -> np.ndarray:
        iy, ix = np.nonzero(~self.inflated)
        return np.stack([ix, iy], axis=1)

    def field_from(self, p) -> np.ndarray:
        """Geodesic distance field from point ``p`` (cached per source cell)."""
        c = self.cell(p)
        f = self._fields.get(c)
        if f is None:
            if not self.is_free(p):
                raise ValueError(f"point {tuple(p)} is inside a wall")
            f = distance_field(self.inflated, self.grid, c, self.resolution)
            if len(self._fields) > 64:
                self._fields.clear()
            self._fields[c] = f
        return f

    def lookup(self, f: np.ndarray, q) -> float:
        if not self.is_free(q):
            raise ValueError(f"point {tuple(q)} is inside a wall")
        ix, iy = self.cell(q)
        return float(f[iy, ix])


def geodesic_distance(scene: Scene, p, q) -> float:
    """8-connected grid geodesic in meters on the robot-inflated grid; inf if unreachable."""
    if not scene.is_free(q):
        raise ValueError(f"point {tuple(q)} is inside a wall")
    return scene.lookup(scene.field_from(p), q)


def free_space_components(grid: np.ndarray) -> int:
    _, n = ndimage.label(~grid, structure=np.ones((3, 3)))
    return int(n)


def _split_rooms(rng, rooms_wanted, nx, ny, cfg: SceneConfig, res: float):
    """Binary space partition into rooms.

    Returns partition walls as ``(kind, c, a0, a1, door_lo, door_hi)`` in cells, where
    ``kind`` is "v" (wall at column ``c`` spanning rows a0..a1) or "h" (row ``c``,
    columns a0..a1) and the door gap covers door_lo..door_hi along the wall.
    """
    rooms = [(1, 1, nx - 1, ny - 1)]
    walls = []
    min_room = int(round(cfg.min_room / res))
    door_min = int(np.ceil(cfg.corridor_width / res))
    t = cfg.wall_cells
    while len(rooms) < rooms_wanted:
        rooms.sort(key=lambda r: (r[2] - r[0]) * (r[3] - r[1]), reverse=True)
        for k, (x0, y0, x1, y1) in enumerate(rooms):
            w, h = x1 - x0, y1 - y0
            vertical = w >= h
            span = w if vertical else h
            if span >= 2 * min_room + t:
                break
        else:
            break
        rooms.pop(k)
        pos = int(rng.integers(min_room, span - min_room - t + 1))
        door_w = int(rng.integers(door_min, door_min + 6))
        if vertical:
            wx = x0 + pos
            lo = int(rng.integers(y0 + 2, max(y0 + 3, y1 - door_w - 2)))
            walls.append(("v", wx, y0, y1, lo, lo + door_w))
            rooms += [(x0, y0, wx, y1), (wx + t, y0, x1, y1)]
        else:
            wy = y0 + pos
            lo = int(rng.integers(x0 + 2, max(x0 + 3, x1 - door_w - 2)))
            walls.append(("h", wy, x0, x1, lo, lo + door_w))
            rooms += [(x0, y0, x1, wy), (x0, wy + t, x1, y1)]
    return walls


def _build_grid(rng, cfg: SceneConfig, res: float) -> np.ndarray:
    nx, ny = int(round(cfg.width / res)), int(round(cfg.height / res))
    grid = np.zeros((ny, nx), dtype=bool)
    grid[0, :] = grid[-1, :] = True
    grid[:, 0] = grid[:, -1] = True
    t = cfg.wall_cells
    doors = np.zeros_like(grid)
    for kind, c, a0, a1, lo, hi in _split_rooms(rng, cfg.rooms, nx, ny, cfg, res):
        if kind == "v":
            grid[a0:a1, c:c + t] = True
            grid[lo:hi, c:c + t] = False
            doors[max(lo - 8, 0):hi + 8, max(c - 8, 0):c + t + 8] = True
        else:
            grid[c:c + t, a0:a1] = True
            grid[c:c + t, lo:hi] = False
            doors[max(c - 8, 0):c + t + 8, max(lo - 8, 0):hi + 8] = True
    # obstacle clearance of 0.6 m keeps every gap passable for the robot
    clear = int(round(0.6 / res))
    for _ in range(cfg.obstacles):
        for _attempt in range(30):
            w = int(rng.integers(4, 11))
            h = int(rng.integers(4, 11))
            x = int(rng.integers(1, nx - w - 1))
            y = int(rng.integers(1, ny - h - 1))
            ys, xs = slice(max(y - clear, 0), y + h + clear), slice(max(x - clear, 0), x + w + clear)
            if grid[ys, xs].any() or doors[y:y + h, x:x + w].any():
                continue
            grid[y:y + h, x:x + w] = True
            break
    return grid


def generate_scene(seed: int, config: SceneConfig | None = None) -> Scene:
    """Procedural rooms-and-doors floor plan, deterministic in ``seed``."""
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    for _ in range(100):
        grid = _build_grid(rng, cfg, RESOLUTION)
        if free_space_components(grid) != 1:
            continue
        scene = Scene(grid, seed=seed)
        _, n = ndimage.label(~scene.inflated, structure=np.ones((3, 3)))
        if n == 1:
            return scene
    raise SceneGenerationError(f"no connected scene after 100 attempts for seed {seed}")
