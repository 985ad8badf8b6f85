"""Train the recurrent PPO policy on an empty single-room map with no pedestrians.

Prints the learning curve every few updates and the final argmax evaluation.
A trace of every evaluation episode lands in ``--out/traces``.

    python demos/empty_map_policy.py --steps 150000 --seed 0 --out /tmp/empty
"""

import argparse
import logging

from navthinker import sim
from navthinker.collect import SimSetup
from navthinker.policy import PPOConfig
from navthinker.ppo_train import Ablation, Agent, evaluate_policy, train_policy

p = argparse.ArgumentParser()
p.add_argument("--steps", type=int, default=150_000)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--out", default=None)
args = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

setup = SimSetup(sim.SceneConfig(rooms=1, obstacles=0), n_robots=1, n_humans=0)
run = train_policy(setup, None, PPOConfig(), flags=Ablation(lookahead=False, traj_reward=False),
                   total_steps=args.steps, seed=args.seed, eval_episodes=50, out_dir=args.out)
for row in run.curve[:: max(1, len(run.curve) // 10)]:
    print(f"{row['env_steps']:>7} steps  train SR {row['SR']:5.1f}  entropy {row['entropy']:.3f}")
print("argmax eval:", {k: round(v, 1) for k, v in run.report.as_row().items()})

if args.out:
    agent = Agent(run.net, None, Ablation(False, False))
    res = evaluate_policy(agent, setup, args.seed, 10, trace_dir=f"{args.out}/traces")
    print(f"wrote 10 traces; SR {res.report.SR:.0f}")
