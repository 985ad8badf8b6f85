"""Episode trace export (JSON lines) and metric recomputation from traces."""

from __future__ import annotations

import json
import math
from pathlib import Path

from .env import EpisodeState, StepResult
from .metrics import RobotEpisode


def _f(x: float):
    return None if x is None or math.isinf(x) else float(x)


class EpisodeLog:
    """Accumulates per-step records for one episode."""

    def __init__(self, state: EpisodeState):
        self.header = {
            "type": "episode",
            "seed": int(state.seed),
            "n_robots": len(state.robots),
            "starts": [[float(r.position[0]), float(r.position[1])] for r in state.robots],
            "goals": [[float(r.goal[0]), float(r.goal[1])] for r in state.robots],
            "shortest": [float(r.shortest) for r in state.robots],
        }
        self.steps: list[dict] = []
        n = len(state.robots)
        self._min_d: list[list[float]] = [[] for _ in range(n)]
        self._hit = [False] * n

    def record(self, state: EpisodeState, actions, result: StepResult) -> None:
        rows = []
        for i, term in enumerate(result.reward_terms):
            if term is None:
                rows.append(None)
                continue
            rows.append([term.r_goal, term.r_succ, term.r_coll, term.r_traj, term.total])
            self._min_d[i].append(result.info[i]["min_human_dist"])
            self._hit[i] |= bool(result.info[i]["human_collision"])
        self.steps.append({
            "type": "step",
            "t": state.t,
            "robots": [[float(r.position[0]), float(r.position[1]), float(r.heading)] for r in state.robots],
            "humans": [[float(h.position[0]), float(h.position[1])] for h in state.humans],
            "actions": [None if a is None else int(a) for a in actions],
            "rewards": rows,
            "min_human_dist": [None if inf is None else _f(inf["min_human_dist"]) for inf in result.info],
            "human_collision": [None if inf is None else bool(inf["human_collision"]) for inf in result.info],
            "done": [bool(d) for d in result.done],
            "success": [None if inf is None else bool(inf["success"]) for inf in result.info],
        })

    def set_reward(self, i: int, term) -> None:
        """Replace robot ``i``'s reward row in the latest step (after shaping)."""
        self.steps[-1]["rewards"][i] = [term.r_goal, term.r_succ, term.r_coll, term.r_traj, term.total]

    def robot_episodes(self, state: EpisodeState) -> list[RobotEpisode]:
        return [RobotEpisode(r.success, r.shortest, r.path_length, list(self._min_d[i]), self._hit[i])
                for i, r in enumerate(state.robots)]

    def lines(self) -> list[str]:
        return [json.dumps(self.header)] + [json.dumps(s) for s in self.steps]

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


def episodes_from_trace(path) -> list[RobotEpisode]:
    """Rebuild per-robot metric records from an exported trace file."""
    lines = [json.loads(x) for x in Path(path).read_text().splitlines() if x.strip()]
    header, steps = lines[0], lines[1:]
    n = header["n_robots"]
    prev = [tuple(s) for s in header["starts"]]
    path_len = [0.0] * n
    min_d: list[list[float]] = [[] for _ in range(n)]
    hit = [False] * n
    success = [False] * n
    for st in steps:
        for i in range(n):
            if st["rewards"][i] is None:
                continue
            x, y, _ = st["robots"][i]
            if (x, y) != prev[i]:
                path_len[i] += math.hypot(x - prev[i][0], y - prev[i][1])
                prev[i] = (x, y)
            d = st["min_human_dist"][i]
            min_d[i].append(math.inf if d is None else d)
            hit[i] |= st["human_collision"][i]
            success[i] = st["success"][i]
    return [RobotEpisode(success[i], header["shortest"][i], path_len[i], min_d[i], hit[i]) for i in range(n)]
