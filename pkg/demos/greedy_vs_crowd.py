"""Greedy geodesic descent with and without pedestrians.

The greedy walker ignores people, so its collision rate climbs with the crowd
size while its success rate barely moves. Traces are re-read to recompute the
metrics, which must agree with the live numbers.

    python demos/greedy_vs_crowd.py [episodes]
"""

import sys
import tempfile
from pathlib import Path

from navthinker import sim
from navthinker.config import from_dict
from navthinker.harness import greedy_episodes

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 40

for humans in (0, 4, 8):
    cfg = from_dict({"n_humans": humans})
    with tempfile.TemporaryDirectory() as tmp:
        report, _ = greedy_episodes(cfg, master=1, episodes=episodes, trace_dir=tmp)
        again = sim.compute_metrics([sim.episodes_from_trace(t) for t in sorted(Path(tmp).glob("*.jsonl"))])
    assert again.as_row() == report.as_row()
    print(f"{humans} humans: SR {report.SR:5.1f}  SPL {report.SPL:5.1f}  PSC {report.PSC:5.1f}  "
          f"H-Coll {report.H_Coll:5.1f}")
