import numpy as np
import pytest

from pegelab.feedback import ConstantPolicy, ZeroPolicy
from pegelab.model import (AffineField, EntropyCost, ParamTheta, QuadraticCost, QuadraticTerminal,
                           example_cost, example_theta)
from pegelab.policies import lq_policy, solve_riccati
from pegelab.sde import (SimulationBlowup, TimeGrid, Trajectory, affine_exact_value,
                         episode_cost, episode_rng, mc_policy_value, simulate_batch,
                         simulate_episode)


def scalar(a=0.0, b=1.0):
    return ParamTheta(np.array([[a]]), np.array([[b]]))


def test_grid():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25 and g.times[-1] == 2.0 and len(g.times) == 9
    assert TimeGrid.default(3.0).dt == pytest.approx(3e-3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_zero_dynamics_keep_state():
    tr = simulate_episode(scalar(0, 0), ZeroPolicy(1, 1), TimeGrid(1.0, 100), [0.7], noise_on=False)
    assert np.all(tr.x_path == 0.7)


def test_constant_drift():
    for n in (50, 100, 200):
        g = TimeGrid(1.0, n)
        tr = simulate_episode(scalar(0, 1), ConstantPolicy([1.0], 1), g, [0.3], noise_on=False)
        assert abs(tr.x_path[-1, 0] - 1.3) < g.dt


def test_first_order_convergence():
    # x' = -x has x_T = exp(-1); Euler error halves with dt
    errs = []
    for n in (100, 200, 400):
        tr = simulate_episode(scalar(-1.0, 0), ZeroPolicy(1, 1), TimeGrid(1.0, n), [1.0],
                              noise_on=False)
        errs.append(abs(tr.x_path[-1, 0] - np.exp(-1.0)))
    assert 1.8 < errs[0] / errs[1] < 2.2 and 1.8 < errs[1] / errs[2] < 2.2


def test_brownian_moments():
    g = TimeGrid(1.0, 100)
    rngs = [episode_rng(5, i) for i in range(10_000)]
    trs = simulate_batch(scalar(0, 0), ZeroPolicy(1, 1), g, [0.5], rngs)
    xT = np.array([t.x_path[-1, 0] for t in trs])
    assert abs(xT.mean() - 0.5) < 4 * np.sqrt(1.0 / 10_000)
    assert abs(xT.var() - 1.0) < 0.1


def test_trajectory_records_policy_and_start():
    th = example_theta()
    g = TimeGrid(1.0, 200)
    pol = lq_policy(solve_riccati(example_cost(), th, g), th, example_cost())
    tr = simulate_episode(th, pol, g, [0.2], episode_rng(1, 0))
    assert tr.x_path[0, 0] == 0.2
    recomputed = pol(tr.times, tr.x_path)
    assert np.allclose(tr.z_path[:, 1:], recomputed, atol=1e-14)
    assert np.array_equal(tr.z_path[:, :1], tr.x_path)


def test_determinism():
    th = example_theta()
    g = TimeGrid(1.0, 100)
    pol = ConstantPolicy([1.0, -1.0], 1)
    a = simulate_episode(th, pol, g, [0.0], episode_rng(3, 7))
    b = simulate_episode(th, pol, g, [0.0], episode_rng(3, 7))
    c = simulate_episode(th, pol, g, [0.0], episode_rng(3, 8))
    assert np.array_equal(a.x_path, b.x_path) and not np.array_equal(a.x_path, c.x_path)


def test_trajectory_has_no_noise_field():
    fields = set(Trajectory.__dataclass_fields__)
    assert fields == {"times", "x_path", "z_path"}


def test_blowup_guard():
    with pytest.raises(SimulationBlowup) as err:
        simulate_episode(scalar(60.0, 0), ZeroPolicy(1, 1), TimeGrid(1.0, 100), [1.0],
                         noise_on=False)
    assert err.value.step > 0


def test_episode_cost_terminal_only():
    c = QuadraticCost(np.zeros((1, 1)), np.eye(1), np.eye(1))
    tr = simulate_episode(scalar(0, 1), ConstantPolicy([0.0], 1), TimeGrid(1.0, 10), [2.0],
                          noise_on=False)
    assert episode_cost(tr, c).value == pytest.approx(4.0)


def test_episode_cost_entropy_uniform():
    c = EntropyCost(AffineField.constant([0.0, 0.0]), QuadraticTerminal(np.zeros((1, 1))))
    th = ParamTheta(np.zeros((1, 1)), np.ones((1, 2)))
    tr = simulate_episode(th, ConstantPolicy([0.5, 0.5], 1), TimeGrid(1.0, 100), [0.0],
                          episode_rng(0, 0))
    ec = episode_cost(tr, c)
    assert ec.valid and ec.value == pytest.approx(-np.log(2), abs=1e-2)


def test_episode_cost_invalid_action():
    c = EntropyCost(AffineField.constant([0.0, 0.0]), QuadraticTerminal(np.zeros((1, 1))))
    th = ParamTheta(np.zeros((1, 1)), np.ones((1, 2)))
    tr = simulate_episode(th, ConstantPolicy([0.9, 0.9], 1), TimeGrid(1.0, 10), [0.0],
                          noise_on=False)
    ec = episode_cost(tr, c)
    assert not ec.valid and ec.value == np.inf


def test_zero_noise_lq_matches_deterministic_value():
    th, c = example_theta(), example_cost()
    g = TimeGrid(1.0, 1000)
    ric = solve_riccati(c, th, g)
    tr = simulate_episode(th, lq_policy(ric, th, c), g, [1.0], noise_on=False)
    assert episode_cost(tr, c).value == pytest.approx(ric.P[0, 0, 0], abs=10 * g.dt)


def test_mc_value_lq_example():
    th, c = example_theta(), example_cost()
    g = TimeGrid(1.0, 1000)
    pol = lq_policy(solve_riccati(c, th, g), th, c)
    res = mc_policy_value(th, pol, c, g, 10_000, seed=11)
    assert abs(res.mean - np.log(3) / 2) < 3 * res.se
    # the exact moment recursion agrees with the continuous value up to O(dt)
    assert affine_exact_value(th, pol, c, g, [0.0]) == pytest.approx(np.log(3) / 2, abs=2e-3)


def test_mc_value_entropy_decoupled():
    c = EntropyCost(AffineField.constant([0.0, 0.0]), QuadraticTerminal(np.zeros((1, 1))))
    th = ParamTheta(np.zeros((1, 1)), np.zeros((1, 2)))
    res = mc_policy_value(th, ConstantPolicy([0.5, 0.5], 1), c, TimeGrid(2.0, 100), 200, seed=0)
    assert res.mean == pytest.approx(-2 * np.log(2)) and res.se == pytest.approx(0, abs=1e-12)


def test_mc_value_zero_cost():
    c = QuadraticCost(np.zeros((1, 1)), np.eye(1), np.zeros((1, 1)))
    res = mc_policy_value(scalar(0, 0), ZeroPolicy(1, 1), c, TimeGrid(1.0, 10), 2, seed=0)
    assert (res.mean, res.se) == (0.0, 0.0)
    with pytest.raises(ValueError):
        mc_policy_value(scalar(0, 0), ZeroPolicy(1, 1), c, TimeGrid(1.0, 10), 1, seed=0)


def test_mc_value_reports_invalid():
    c = EntropyCost(AffineField.constant([0.0, 0.0]), QuadraticTerminal(np.zeros((1, 1))))
    th = ParamTheta(np.zeros((1, 1)), np.ones((1, 2)))
    res = mc_policy_value(th, ConstantPolicy([0.9, 0.9], 1), c, TimeGrid(1.0, 10), 5, seed=0)
    assert not res.valid and res.n_invalid == 5


def test_trajectory_csv(tmp_path):
    tr = simulate_episode(example_theta(), ConstantPolicy([1.0, 0.0], 1), TimeGrid(1.0, 4), [0.0],
                          noise_on=False)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x_1,z_1,z_2,z_3" and len(lines) == 6
