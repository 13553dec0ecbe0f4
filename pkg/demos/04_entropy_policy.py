"""Entropy-regularised control with two actions on a scalar state.

The value function solves a semilinear parabolic equation; the greedy
feedback is the softmax of the negated marginal costs.  We plot nothing and
print a few slices instead, then measure how the cost of a greedy policy
built from a wrong parameter grows with the parameter error.
"""
import numpy as np

from pegelab import (AffineField, EntropyCost, ParamTheta, QuadraticTerminal, TimeGrid,
                     entropy_policy, mc_policy_value, solve_hjb_entropy)
from pegelab.hjb import hjb_grid, hjb_residual

cost = EntropyCost(AffineField([0.2, -0.1], [[0.5], [-0.5]]), QuadraticTerminal(np.eye(1)))
theta = ParamTheta(np.array([[-0.5]]), np.array([[1.0, -1.0]]))

sol = solve_hjb_entropy(cost, theta, hjb_grid(1.0, 4.0, 101), (4.0, 101))
print(f"HJB residual on |x| <= 2: {hjb_residual(sol, theta, cost):.2e}")
policy = entropy_policy(sol, theta, cost)
for x in (-2.0, 0.0, 2.0):
    print(f"psi(0, {x:+.0f}) = {np.round(policy(0.0, np.array([x])), 3)}")

grid = TimeGrid(1.0, 500)
base = mc_policy_value(theta, policy, cost, grid, 4000, seed=3, x0=[0.5])
rng = np.random.default_rng(0)
direction = rng.standard_normal((1, 3))
direction /= np.linalg.norm(direction)
for r in (0.1, 0.2, 0.4):
    wrong = ParamTheta.from_matrix(theta.as_matrix() + r * direction, 1)
    pol = entropy_policy(solve_hjb_entropy(cost, wrong, hjb_grid(1.0, 4.0, 101), (4.0, 101)),
                         wrong, cost)
    val = mc_policy_value(theta, pol, cost, grid, 4000, seed=3, x0=[0.5])
    print(f"radius {r:.1f}: extra cost {val.mean - base.mean:.5f}")
