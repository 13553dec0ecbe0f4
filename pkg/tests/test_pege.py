import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pegelab.estimator import truncate
from pegelab.model import (AffineField, EntropyCost, ParamTheta, QuadraticCost, QuadraticTerminal,
                           example_cost, example_theta)
from pegelab.pege import (PegeSchedule, cycle_of, estimate_optimal_value, evaluate_policy_values,
                          greedy_policies, regret_decompose, run_pege, run_pege_batch, schedule_m)
from pegelab.sde import TimeGrid, mc_policy_value

from conftest import example_config


def test_schedule_m_examples():
    assert schedule_m(PegeSchedule("power", 1.0), 3) == 3
    assert schedule_m(PegeSchedule("power", 0.5), 4) == 2
    assert schedule_m(PegeSchedule("doubling"), 3) == 8
    with pytest.raises(ValueError):
        schedule_m(PegeSchedule("power", 1.0), 0)
    with pytest.raises(ValueError):
        PegeSchedule("power", 1.5)


def test_cycle_examples():
    lin = PegeSchedule("power", 1.0)
    assert [lin.C(k) for k in (1, 2, 3)] == [2, 5, 9]
    assert cycle_of(lin, 7) == 3
    dbl = PegeSchedule("doubling")
    assert [dbl.C(k) for k in (1, 2, 3)] == [3, 8, 17]
    assert cycle_of(dbl, 9) == 3
    for s in (lin, dbl, PegeSchedule("power", 0.3)):
        assert cycle_of(s, 1) == 1


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 1.0), st.integers(1, 400), st.booleans())
def test_cycle_bracket_and_exploration_set(r, m, doubling):
    s = PegeSchedule("doubling") if doubling else PegeSchedule("power", r)
    k = s.cycle_of(m)
    assert s.C(k - 1) < m <= s.C(k)
    mask = s.exploration_mask(m)
    starts = {s.C(j - 1) + 1 for j in range(1, k + 1)}
    assert set(np.flatnonzero(mask) + 1) == {e for e in starts if e <= m}
    assert np.array_equal(s.cycles(m), [s.cycle_of(i) for i in range(1, m + 1)])


def test_single_episode_run():
    cfg = example_config(n_episodes=1)
    led = run_pege(cfg)
    assert led.N == 1 and led.explore.tolist() == [True]
    assert led.regret() == pytest.approx(led.cost[0] - led.v_star)


def test_theta_bar_constant_within_cycle():
    cfg = example_config(n_episodes=30)
    led = run_pege(cfg)
    for k in np.unique(led.cycle):
        block = led.theta_tilde[(led.cycle == k) & ~led.explore]
        assert np.all(block == block[0])
    # refreshed at each cycle boundary
    firsts = [led.theta_tilde[(led.cycle == k) & ~led.explore][0] for k in (2, 3, 4)]
    assert not np.array_equal(firsts[0], firsts[1])


def test_theta_bar_is_truncated_map_after_exploration():
    cfg = example_config(n_episodes=12)
    led = run_pege(cfg)
    e = np.flatnonzero(led.explore)
    for i in e[1:]:
        if i + 1 < led.N:
            assert np.allclose(led.theta_tilde[i + 1], truncate(cfg.truncation, led.theta_hat[i]))


def test_optional_update_keeps_exploration_indices():
    off = run_pege(example_config(n_episodes=25))
    on = run_pege(example_config(n_episodes=25, optional_update=True))
    assert np.array_equal(off.explore, on.explore)
    exploit = np.flatnonzero(~on.explore)
    changes = sum(not np.array_equal(on.theta_tilde[i], on.theta_tilde[i - 1])
                  for i in exploit if not on.explore[i - 1])
    assert changes > 0


def test_determinism_and_batch_equivalence():
    cfg = example_config(n_episodes=15)
    a = run_pege_batch(cfg, [3, 4])
    b = run_pege_batch(cfg, [4, 3])
    c = run_pege(example_config(n_episodes=15, seed=4))
    assert np.array_equal(a[1].cost, b[0].cost) and np.array_equal(a[1].cost, c.cost)
    assert np.array_equal(a[0].theta_hat, b[1].theta_hat)


def test_truncated_parameter_stays_in_K():
    cfg = example_config(n_episodes=20, V0=1e-3 * np.eye(3), theta0_hat=np.array([[9.0, -9.0, 9.0]]))
    led = run_pege(cfg)
    assert all(cfg.truncation.contains(t) for t in led.theta_tilde)


def test_decomposition_sums_to_regret():
    cfg = example_config(n_episodes=20)
    for led in run_pege_batch(cfg, [0, 1, 2], evaluate=True):
        parts = regret_decompose(led)
        assert sum(parts) == pytest.approx(led.regret(), abs=1e-9)


def test_decomposition_needs_values():
    led = run_pege(example_config(n_episodes=3))
    with pytest.raises(ValueError, match="evaluate"):
        regret_decompose(led)


def test_exploration_only_has_no_exploitation_term():
    led = run_pege(example_config(n_episodes=1), evaluate=True)
    assert regret_decompose(led)[2] == 0.0


def test_oracle_initialised_exploitation_term_vanishes():
    th = example_theta()
    cfg = example_config(n_episodes=10, theta0_hat=th.as_matrix(), V0=1e-10 * np.eye(3))
    led = run_pege(cfg, evaluate=True)
    assert abs(regret_decompose(led)[2]) < 1e-6


def test_optimal_value_example():
    th, c, g = example_theta(), example_cost(), TimeGrid(1.0, 1000)
    v = estimate_optimal_value(th, c, g)
    assert v.analytic == pytest.approx(np.log(3) / 2, abs=1e-8)
    assert v.value == pytest.approx(np.log(3) / 2, abs=1e-3)  # discretisation only
    pol = greedy_policies(c, [th], g)[0]
    mc = mc_policy_value(th, pol, c, g, 20000, seed=5)
    assert abs(mc.mean - np.log(3) / 2) <= 3 * mc.se


def test_optimal_value_zero_cost():
    c = QuadraticCost(np.zeros((1, 1)), np.eye(2), np.zeros((1, 1)))
    v = estimate_optimal_value(example_theta(), c, TimeGrid(1.0, 100))
    assert v.value == 0.0 and v.analytic == 0.0


def test_entropy_run_uses_mc_values():
    th = ParamTheta(np.array([[-0.5]]), np.array([[1.0, -1.0]]))
    cost = EntropyCost(AffineField(np.array([0.2, -0.1]), np.zeros((2, 1))),
                       QuadraticTerminal(np.eye(1)))
    from pegelab.estimator import TruncationSpec
    from pegelab.model import ParamBox
    from pegelab.policies import ExplorationSpec
    box = ParamBox(np.array([[-1.0, 0.5, -1.5]]), np.array([[0.0, 1.5, -0.5]]))
    cfg = example_config(theta=th, cost=cost, grid=TimeGrid(1.0, 100), box=box,
                         truncation=TruncationSpec.around(box, 0.5),
                         exploration=ExplorationSpec([[0.7, 0.3], [0.3, 0.7]], [0.0, 0.5, 1.0]),
                         n_episodes=4, hjb_domain=(4.0, 51))
    v = estimate_optimal_value(th, cost, cfg.grid, n_mc=500, hjb_domain=(4.0, 51))
    assert v.method == "monte-carlo" and v.se > 0
    led = run_pege(cfg, v_star=v, evaluate=True, n_eval=200)
    assert np.all(led.J_se > 0)
    assert sum(regret_decompose(led)) == pytest.approx(led.regret(), abs=1e-9)


def test_example_median_error_and_regret():
    """Exploration on, r = 1, N = 200, 50 seeds."""
    cfg = example_config(n_episodes=200, grid=TimeGrid(1.0, 1000))
    leds = run_pege_batch(cfg, range(50))
    th = example_theta().as_matrix()
    err = np.abs(np.array([led.theta_tilde[-1] for led in leds]) - th)
    per_coef = np.median(err, axis=0)
    assert np.all(per_coef < 0.2), per_coef
    reg = np.median([led.regret() for led in leds])
    assert np.isfinite(reg) and reg > 0
