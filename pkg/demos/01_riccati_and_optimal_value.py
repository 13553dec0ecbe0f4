"""Scalar state, two identical actuators: the Riccati solution and the optimal value.

With A = 0, B = (1, 1), Q = 0, R = I and terminal weight 1 the Riccati
equation has the closed form p_t = 1 / (1 + 2 (T - t)).  We solve it with
RK4, build the linear feedback, and check the Monte Carlo cost of that
feedback against the analytic value (ln 3) / 2.
"""
import numpy as np

from pegelab import TimeGrid, estimate_optimal_value, lq_policy, mc_policy_value, solve_riccati
from pegelab.model import example_cost, example_theta

theta, cost = example_theta(), example_cost()
grid = TimeGrid(1.0, 1000)

ric = solve_riccati(cost, theta, grid)
closed = 1.0 / (1.0 + 2.0 * (1.0 - grid.times))
print(f"max |p_t - closed form| = {np.abs(ric.P[:, 0, 0] - closed).max():.2e}")

policy = lq_policy(ric, theta, cost)
print("action at t=0, x=1:", policy(0.0, np.array([1.0])))

v = estimate_optimal_value(theta, cost, grid)
mc = mc_policy_value(theta, policy, cost, grid, n_mc=20_000, seed=1)
print(f"analytic V*          {v.analytic:.5f}   ((ln 3)/2 = {np.log(3) / 2:.5f})")
print(f"exact discrete value {v.value:.5f}")
print(f"Monte Carlo          {mc.mean:.5f} +/- {mc.se:.5f}")
