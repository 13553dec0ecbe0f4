"""Why exploration is needed.

The greedy feedback for a prior with B = (1, 0) never moves the second
actuator, so no data about its coefficient ever arrives: the matching entry
of the precision matrix stays at its prior value forever.  Adding one
exploration episode per cycle fixes this.  Exploring is expensive here (an
exploration episode costs about 3 against an optimum of about 0.55), so at
short horizons greedy play is ahead; what differs is the growth rate.
"""
import numpy as np

from pegelab import ExplorationSpec, PegeConfig, PegeSchedule, TimeGrid, TruncationSpec
from pegelab.model import ParamBox, example_cost, example_theta
from pegelab.pege import run_pege_batch

box = ParamBox(np.array([[-0.5, 0.5, 0.5]]), np.array([[0.5, 1.5, 1.5]]))
prior = np.array([[0.0, 1.0, 0.0]])
common = dict(theta=example_theta(), cost=example_cost(), grid=TimeGrid(1.0, 500),
              theta0_hat=prior, V0=np.eye(3), truncation=TruncationSpec.around(box, 0.5),
              exploration=ExplorationSpec(np.eye(2), [0.0, 0.5, 1.0]),
              schedule=PegeSchedule("power", 1.0), n_episodes=128, box=box)

seeds = range(20)
greedy = run_pege_batch(PegeConfig(greedy_only=True, **common), seeds, record_diag=True)
pege = run_pege_batch(PegeConfig(**common), seeds)

print("precision entry of the idle coefficient after 128 episodes:",
      sorted({float(led.G_diag[-1, 2]) for led in greedy}))
b2_greedy = np.median([abs(led.theta_hat[-1, 0, 2] - 1.0) for led in greedy])
b2_pege = np.median([abs(led.theta_hat[-1, 0, 2] - 1.0) for led in pege])
print(f"median |b2 error|: greedy only {b2_greedy:.3f}, with exploration {b2_pege:.3f}")
Ns = np.array([16, 32, 64, 128])
rg = np.array([np.mean([led.regret(N) for led in greedy]) for N in Ns])
rp = np.array([np.mean([led.regret(N) for led in pege]) for N in Ns])
for N, a, b in zip(Ns, rg, rp):
    print(f"N={N:4d}  mean regret greedy {a:7.2f}   PEGE {b:7.2f}")
tail = slice(1, None)
print(f"log-log slope over N=32..128: greedy {np.polyfit(np.log(Ns[tail]), np.log(rg[tail]), 1)[0]:.2f}, "
      f"PEGE {np.polyfit(np.log(Ns[tail]), np.log(rp[tail]), 1)[0]:.2f}")
