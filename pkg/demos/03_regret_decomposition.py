"""Splitting the regret of a run into noise, exploration and exploitation parts.

Each episode's realised cost is compared with the exact expected cost of the
policy that was played.  The noise part averages out across seeds; the
exploration part grows with the number of cycles; the exploitation part
shrinks as the estimate improves.
"""
import numpy as np

from pegelab import ExplorationSpec, PegeConfig, PegeSchedule, TimeGrid, TruncationSpec
from pegelab.model import ParamBox, example_cost, example_theta
from pegelab.pege import regret_decompose, run_pege_batch

box = ParamBox(np.array([[-0.5, 0.5, 0.5]]), np.array([[0.5, 1.5, 1.5]]))
cfg = PegeConfig(theta=example_theta(), cost=example_cost(), grid=TimeGrid(1.0, 500),
                 theta0_hat=np.zeros((1, 3)), V0=np.eye(3),
                 truncation=TruncationSpec.around(box, 0.5),
                 exploration=ExplorationSpec(np.eye(2), [0.0, 0.5, 1.0]),
                 schedule=PegeSchedule("power", 1.0), n_episodes=100, box=box)

ledgers = run_pege_batch(cfg, range(40), evaluate=True)
parts = np.array([regret_decompose(led) for led in ledgers])
total = np.array([led.regret() for led in ledgers])
print(f"largest |sum of parts - regret| = {np.abs(parts.sum(1) - total).max():.1e}")
for name, col in zip(("noise", "exploration", "exploitation"), parts.T):
    print(f"{name:>12}: mean {col.mean():7.3f}  SE {col.std(ddof=1) / np.sqrt(len(col)):.3f}")

led = ledgers[0]
print("\nfirst ten episodes of seed 0")
for i in range(10):
    phase = "explore" if led.explore[i] else "exploit"
    print(f"  m={i + 1:2d} cycle {led.cycle[i]} {phase:7s} cost {led.cost[i]:6.3f} "
          f"J {led.J[i]:6.3f}")
