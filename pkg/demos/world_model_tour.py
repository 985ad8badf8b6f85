"""Collect scripted experience, fit a small world model and compare it with its untrained twin.

Then imagine one step ahead for each of the four actions from a held-out context
and show how far apart the imagined scans are.

    python demos/world_model_tour.py [episodes] [steps]
"""

import sys

import numpy as np

from navthinker.collect import SimSetup, collect
from navthinker.replay import ReplayStore
from navthinker.wm_train import WMTrainConfig, evaluate_wm, heldout_starts, train_wm
from navthinker.world_model import WorldModel, decode, predict_next

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 80
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 400

store = ReplayStore()
collect(store, SimSetup(), episodes, master_seed=7)
print(f"replay: {store.stats()['episodes']} episodes, {len(store)} transitions")

fresh = WorldModel(seed=7)
model, curve = train_wm(store, WorldModel(seed=7), WMTrainConfig(steps=steps, eval_every=0, checkpoint_every=0),
                        seed=7)
print(f"loss {curve[0]['total']:.3f} -> {curve[-1]['total']:.3f} over {steps} steps")
for name, m in (("untrained", fresh), ("trained", model)):
    r = evaluate_wm(m, store)
    print(f"{name:>9}: cos {r.cos_sim:.3f}  depth rmse {r.depth_rmse:.3f}  ade {r.traj_ade:.2f} m"
          f"  (stay-put {r.baseline_ade:.2f} m)")

# one held-out context, four imagined futures
w = store.windows(heldout_starts(store)[:1])
z = model.encoder(w.depth[0, :-1])
names = ["forward", "left", "right", "stop"]
scans = []
for a in range(4):
    nxt = predict_next(model, z, list(w.actions[0, :-1]) + [a])
    scans.append(decode(model, nxt)[0].data)
for a, d in enumerate(scans):
    gap = np.abs(d - scans[0]).mean()
    print(f"imagined {names[a]:>7}: mean depth {d.mean():.3f}, mean |diff| to forward {gap:.3f}")
