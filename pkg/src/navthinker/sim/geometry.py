"""Grid geometry kernels: DDA raycasting, disc/wall overlap and grid Dijkstra.

Grids are indexed ``grid[iy, ix]``; cell ``(ix, iy)`` covers
``[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res)`` in world meters.
"""

from __future__ import annotations

import heapq
import math

import numba
import numpy as np

SQRT2 = math.sqrt(2.0)


@numba.njit(cache=True)
def _ray_grid(grid, res, ox, oy, dx, dy, max_range):
    ny, nx = grid.shape
    gx = ox / res
    gy = oy / res
    ix = int(math.floor(gx))
    iy = int(math.floor(gy))
    if ix < 0 or iy < 0 or ix >= nx or iy >= ny:
        return max_range
    if grid[iy, ix]:
        return 0.0
    if dx > 0:
        step_x = 1
        t_max_x = ((ix + 1) - gx) * res / dx
        t_dx = res / dx
    elif dx < 0:
        step_x = -1
        t_max_x = (gx - ix) * res / -dx
        t_dx = res / -dx
    else:
        step_x = 0
        t_max_x = np.inf
        t_dx = np.inf
    if dy > 0:
        step_y = 1
        t_max_y = ((iy + 1) - gy) * res / dy
        t_dy = res / dy
    elif dy < 0:
        step_y = -1
        t_max_y = (gy - iy) * res / -dy
        t_dy = res / -dy
    else:
        step_y = 0
        t_max_y = np.inf
        t_dy = np.inf
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            ix += step_x
            t_max_x += t_dx
        else:
            t = t_max_y
            iy += step_y
            t_max_y += t_dy
        if t >= max_range:
            return max_range
        if ix < 0 or iy < 0 or ix >= nx or iy >= ny:
            return max_range
        if grid[iy, ix]:
            return t


@numba.njit(cache=True)
def _ray_discs(ox, oy, dx, dy, discs, best):
    for k in range(discs.shape[0]):
        cx = discs[k, 0] - ox
        cy = discs[k, 1] - oy
        r = discs[k, 2]
        b = cx * dx + cy * dy
        c = cx * cx + cy * cy - r * r
        if c <= 0.0:
            return 0.0
        disc = b * b - c
        if b <= 0.0 or disc < 0.0:
            continue
        t = b - math.sqrt(disc)
        if t < best:
            best = t
    return best


@numba.njit(cache=True)
def raycast_kernel(grid, res, x, y, heading, fov, n_rays, max_range, discs):
    out = np.empty(n_rays)
    for i in range(n_rays):
        ang = heading - fov / 2.0 + i * fov / (n_rays - 1)
        dx = math.cos(ang)
        dy = math.sin(ang)
        t = _ray_grid(grid, res, x, y, dx, dy, max_range)
        t = _ray_discs(x, y, dx, dy, discs, t)
        out[i] = min(t, max_range) / max_range
    return out


@numba.njit(cache=True)
def disc_hits_wall(grid, res, x, y, r):
    """True when the disc overlaps an occupied cell or leaves the grid."""
    ny, nx = grid.shape
    if x - r < 0.0 or y - r < 0.0 or x + r > nx * res or y + r > ny * res:
        return True
    x0 = int(math.floor((x - r) / res))
    x1 = int(math.floor((x + r) / res))
    y0 = int(math.floor((y - r) / res))
    y1 = int(math.floor((y + r) / res))
    r2 = r * r
    for iy in range(max(y0, 0), min(y1, ny - 1) + 1):
        for ix in range(max(x0, 0), min(x1, nx - 1) + 1):
            if grid[iy, ix]:
                px = min(max(x, ix * res), (ix + 1) * res)
                py = min(max(y, iy * res), (iy + 1) * res)
                ddx = px - x
                ddy = py - y
                if ddx * ddx + ddy * ddy < r2:
                    return True
    return False


@numba.njit(cache=True)
def segment_disc_clear(grid, res, ax, ay, bx, by, r, n):
    """True when a disc of radius r is wall-free at n evenly spaced points from a to b."""
    step = 1.0 / (n - 1)
    for i in range(n):
        s = 1.0 if i == n - 1 else i * step
        if disc_hits_wall(grid, res, ax + (bx - ax) * s, ay + (by - ay) * s, r):
            return False
    return True


@numba.njit(cache=True)
def _dijkstra(blocked, occupied, sx, sy, res):
    """Distances (m) from cell (sx, sy) over 8-connected non-blocked cells.

    The source may itself be blocked-but-free. Afterwards every free cell that
    is blocked receives the distance of stepping into it from a reached
    neighbour, so endpoints may sit in the inflation margin while path
    interiors may not.
    """
    ny, nx = blocked.shape
    dist = np.full((ny, nx), np.inf)
    dist[sy, sx] = 0.0
    heap = [(0.0, sy * nx + sx)]
    diag = SQRT2 * res
    while len(heap) > 0:
        d, idx = heapq.heappop(heap)
        cy = idx // nx
        cx = idx % nx
        if d > dist[cy, cx]:
            continue
        if blocked[cy, cx] and not (cy == sy and cx == sx):
            continue
        for oy in range(-1, 2):
            for ox in range(-1, 2):
                if ox == 0 and oy == 0:
                    continue
                yy = cy + oy
                xx = cx + ox
                if yy < 0 or xx < 0 or yy >= ny or xx >= nx or blocked[yy, xx]:
                    continue
                nd = d + (diag if ox != 0 and oy != 0 else res)
                if nd < dist[yy, xx]:
                    dist[yy, xx] = nd
                    heapq.heappush(heap, (nd, yy * nx + xx))
    out = dist.copy()
    for cy in range(ny):
        for cx in range(nx):
            if occupied[cy, cx] or not blocked[cy, cx] or (cy == sy and cx == sx):
                continue
            best = np.inf
            for oy in range(-1, 2):
                for ox in range(-1, 2):
                    if ox == 0 and oy == 0:
                        continue
                    yy = cy + oy
                    xx = cx + ox
                    if yy < 0 or xx < 0 or yy >= ny or xx >= nx:
                        continue
                    if blocked[yy, xx] and not (yy == sy and xx == sx):
                        continue
                    cand = dist[yy, xx] + (diag if ox != 0 and oy != 0 else res)
                    if cand < best:
                        best = cand
            out[cy, cx] = best
    return out


def distance_field(blocked: np.ndarray, occupied: np.ndarray, cell: tuple[int, int], res: float) -> np.ndarray:
    ix, iy = cell
    return _dijkstra(blocked, occupied, int(ix), int(iy), float(res))


def segment_point_distance(ax, ay, bx, by, px, py) -> float:
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    t = 0.0 if L2 == 0 else min(1.0, max(0.0, ((px - ax) * vx + (py - ay) * vy) / L2))
    return math.hypot(ax + t * vx - px, ay + t * vy - py)


@numba.njit(cache=True)
def nearest_wall_point(grid, res, x, y, max_d):
    """Closest point on any occupied cell within ``max_d``; returns (px, py, d), d = inf if none."""
    ny, nx = grid.shape
    x0 = max(int(math.floor((x - max_d) / res)), 0)
    x1 = min(int(math.floor((x + max_d) / res)), nx - 1)
    y0 = max(int(math.floor((y - max_d) / res)), 0)
    y1 = min(int(math.floor((y + max_d) / res)), ny - 1)
    best = np.inf
    bx = x
    by = y
    for iy in range(y0, y1 + 1):
        for ix in range(x0, x1 + 1):
            if grid[iy, ix]:
                px = min(max(x, ix * res), (ix + 1) * res)
                py = min(max(y, iy * res), (iy + 1) * res)
                d = math.hypot(px - x, py - y)
                if d < best:
                    best = d
                    bx = px
                    by = py
    if best > max_d:
        return x, y, np.inf
    return bx, by, best
