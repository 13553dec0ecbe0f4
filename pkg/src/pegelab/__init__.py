"""Learning-to-control toolkit for linear-convex diffusions.

Simulation of controlled linear SDEs, Bayesian drift estimation, greedy
policy synthesis (Riccati and entropy-regularised HJB), the phased
exploration / greedy exploitation algorithm with regret bookkeeping, and
concentration diagnostics.
"""
from .model import (AffineField, EntropyCost, ParamBox, ParamTheta, QuadraticCost,
                    QuadraticTerminal, grad_h_star, h_en, h_star)
from .sde import TimeGrid, Trajectory, episode_cost, mc_policy_value, simulate_episode
from .estimator import (SufficientStats, TruncationSpec, init_stats, map_estimate, min_eigen,
                        truncate, update_stats)
from .policies import (ExplorationSpec, compute_information_value, lq_policy,
                       make_exploration_policy, solve_riccati)
from .hjb import entropy_policy, solve_hjb_entropy
from .pege import (PegeConfig, PegeSchedule, RegretLedger, estimate_optimal_value,
                   regret_decompose, run_pege)
from .diagnostics import bernstein_tail_check, estimate_orlicz_norm

__version__ = "0.1.0"
