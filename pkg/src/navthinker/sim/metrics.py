"""Per-robot and team navigation metrics (SR, SPL, PSC, H-Coll, T-SR, T-SPL)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSC_RADIUS = 1.0
# a successful path may undercut the 8-connected grid geodesic by the
# discretization overshoot (<= 8.3%) plus the success radius
GRID_OVERSHOOT = 1.0824
PATH_SLACK = 0.3 + 0.2


class MetricsError(ValueError):
    pass


@dataclass
class RobotEpisode:
    success: bool
    shortest: float  # geodesic l_i at episode start
    path_length: float  # realized p_i
    min_human_dists: list[float]  # one entry per step the robot was active
    human_collided: bool

    @property
    def spl_term(self) -> float:
        if not self.success:
            return 0.0
        return self.shortest / max(self.path_length, self.shortest)

    @property
    def psc(self) -> float:
        n = len(self.min_human_dists)
        if n == 0:
            return 1.0
        close = sum(1 for d in self.min_human_dists if d < PSC_RADIUS)
        return 1.0 - close / n


@dataclass
class MetricsReport:
    episodes: list[list[RobotEpisode]] = field(default_factory=list)
    SR: float = 0.0
    SPL: float = 0.0
    PSC: float = 0.0
    H_Coll: float = 0.0
    T_SR: float = 0.0
    T_SPL: float = 0.0

    def as_row(self) -> dict[str, float]:
        return {"SR": self.SR, "SPL": self.SPL, "PSC": self.PSC, "H-Coll": self.H_Coll,
                "T-SR": self.T_SR, "T-SPL": self.T_SPL}


def compute_metrics(episodes: list[list[RobotEpisode]]) -> MetricsReport:
    """Aggregate per-robot records (one inner list per episode) into percentages.

    SR/SPL/PSC/H-Coll average over every robot-episode. The team metrics
    average over episodes; a single-robot episode is a team of one.
    """
    robots = [r for ep in episodes for r in ep]
    for r in robots:
        if r.success and (r.path_length + PATH_SLACK) * GRID_OVERSHOOT < r.shortest:
            raise MetricsError(f"path length {r.path_length:.3f} impossible for geodesic {r.shortest:.3f}")
    if not robots:
        return MetricsReport(episodes=episodes)
    sr = float(np.mean([r.success for r in robots]))
    spl = float(np.mean([r.spl_term for r in robots]))
    psc = float(np.mean([r.psc for r in robots]))
    hcoll = float(np.mean([r.human_collided for r in robots]))
    team = [ep for ep in episodes if ep]
    tsr = float(np.mean([all(r.success for r in ep) for ep in team]))
    tspl = float(np.mean([all(r.success for r in ep) * np.mean([r.spl_term for r in ep]) for ep in team]))
    return MetricsReport(episodes, 100 * sr, 100 * spl, 100 * psc, 100 * hcoll, 100 * tsr, 100 * tspl)
