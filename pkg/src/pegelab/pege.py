"""Phased exploration / greedy exploitation and its regret ledger.

Episodes are numbered ``m = 1, 2, ...``.  Cycle ``k`` consists of one
exploration episode followed by ``m(k)`` greedy episodes, so episode ``m``
explores exactly when ``m = C(k - 1) + 1`` with ``C(K) = K + sum_{j<=K} m(j)``.

Independent seeds are run in lockstep: at each episode index all seeds are
simulated as one batch, which changes nothing about any single run (each
seed has its own noise stream and its own statistics).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import csv
import json
import math

import numpy as np

from .estimator import SufficientStats, TruncationSpec, init_stats, map_estimate, truncate
from .hjb import entropy_policies, hjb_grid
from .model import ParamBox, ParamTheta
from .policies import ExplorationSpec, lq_policies, make_exploration_policy, solve_riccati
from .sde import (TimeGrid, affine_exact_value, affine_exact_values, draw_noise, episode_noise, episode_rng,
                  mc_costs, path_costs, simulate_paths)
from .feedback import AffineTable

ALGO_NS, EVAL_NS, VSTAR_NS = 0, 1, 2


class InvalidEpisodeCost(RuntimeError):
    pass


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class PegeSchedule:
    """``kind`` is ``"power"`` (``m(k) = floor(k^r)``) or ``"doubling"`` (``m(k) = 2^k``)."""

    kind: str = "power"
    r: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "doubling"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.kind == "power" and not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")

    def m(self, k: int) -> int:
        if k < 1:
            raise ValueError("cycles are numbered from 1")
        if self.kind == "doubling":
            return 2 ** k
        # guard against k**r landing just below an integer
        v = int(math.floor(k ** self.r + 1e-12))
        return max(v, 1)

    def C(self, K: int) -> int:
        return K + sum(self.m(k) for k in range(1, K + 1))

    def cycle_of(self, m: int) -> int:
        if m < 1:
            raise ValueError("episodes are numbered from 1")
        k, total = 1, 1 + self.m(1)
        while total < m:
            k += 1
            total += 1 + self.m(k)
        return k

    def cycles(self, N: int) -> np.ndarray:
        """Cycle index of episodes ``1..N``."""
        out = np.empty(N, dtype=int)
        m, k = 0, 1
        while m < N:
            n = min(1 + self.m(k), N - m)
            out[m:m + n] = k
            m += n
            k += 1
        return out

    def exploration_mask(self, N: int) -> np.ndarray:
        cyc = self.cycles(N)
        mask = np.zeros(N, dtype=bool)
        mask[0] = N > 0
        mask[1:] = cyc[1:] != cyc[:-1]
        return mask

    def to_dict(self):
        return {"kind": self.kind, "r": self.r}


def schedule_m(sched: PegeSchedule, k: int) -> int:
    return sched.m(k)


def cycle_of(sched: PegeSchedule, m: int) -> int:
    return sched.cycle_of(m)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PegeConfig:
    theta: ParamTheta
    cost: object
    grid: TimeGrid
    theta0_hat: np.ndarray
    V0: np.ndarray
    truncation: TruncationSpec
    exploration: ExplorationSpec
    schedule: PegeSchedule
    n_episodes: int
    optional_update: bool = False
    seed: int = 0
    x0: np.ndarray | None = None
    box: ParamBox | None = None
    greedy_only: bool = False
    hjb_domain: tuple = (4.0, 201)

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be positive")
        d = self.theta.d
        x0 = np.zeros(d) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(d)
        object.__setattr__(self, "x0", x0)
        th = self.theta.as_matrix()
        if self.box is not None:
            if not self.box.contains(th):
                raise ValueError("true parameter lies outside the declared box")
            if not self.truncation.strictly_contains(self.box):
                raise ValueError("truncation set must contain the parameter box with margin")
        if self.exploration.actions.shape[1] != self.theta.p:
            raise ValueError("exploration actions have the wrong dimension")

    @property
    def variant(self) -> str:
        return self.cost.variant


def greedy_policies(config_or_cost, thetas, grid: TimeGrid, hjb_domain=(4.0, 201)):
    """Greedy feedback for each parameter, Riccati or HJB by cost family."""
    cost = getattr(config_or_cost, "cost", config_or_cost)
    if cost.variant == "quadratic":
        return lq_policies(cost, thetas, grid)
    L, n_x = hjb_domain
    return entropy_policies(cost, thetas, hjb_grid(grid.T, L, n_x, grid.n_steps), L, n_x)


# --------------------------------------------------------------------------
# optimal value


@dataclass(frozen=True)
class OptimalValue:
    value: float
    se: float
    analytic: float | None
    method: str


def estimate_optimal_value(theta: ParamTheta, spec, grid: TimeGrid, n_mc: int = 20000,
                           seed: int = 0, x0=None, hjb_domain=(4.0, 201)) -> OptimalValue:
    """``V*(theta) = J(psi_theta; theta)``.

    Quadratic costs: the expected cost of the discretised closed loop, computed
    exactly by moment propagation; ``analytic`` holds the continuous-time
    Riccati value ``x0'P_0x0 + q_0``.  Entropy costs: Monte Carlo.
    """
    x0 = np.zeros(theta.d) if x0 is None else np.asarray(x0, dtype=float)
    pol = greedy_policies(spec, [theta], grid, hjb_domain)[0]
    if spec.variant == "quadratic":
        ric = solve_riccati(spec, theta, grid)
        return OptimalValue(affine_exact_value(theta, pol, spec, grid, x0), 0.0,
                            ric.value(x0), "exact-discrete")
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    costs = np.concatenate([
        mc_costs(theta, [pol], spec, grid, x0,
                 episode_noise(seed, range(s, min(n_mc, s + 4096)), grid, theta.d, VSTAR_NS))[0]
        for s in range(0, n_mc, 4096)])
    if not np.all(np.isfinite(costs)):
        raise InvalidEpisodeCost("optimal policy produced infinite episode costs")
    return OptimalValue(float(costs.mean()), float(costs.std(ddof=1) / np.sqrt(n_mc)), None,
                        "monte-carlo")


# --------------------------------------------------------------------------
# ledger


@dataclass
class RegretLedger:
    seed: int
    cycle: np.ndarray  # (N,)
    explore: np.ndarray  # (N,) bool
    cost: np.ndarray  # (N,)
    theta_tilde: np.ndarray  # (N, d, d+p) parameter behind the episode's greedy policy
    theta_hat: np.ndarray  # (N, d, d+p) MAP after the episode
    lambda_min: np.ndarray  # (N,) after the episode
    policy_id: np.ndarray  # (N,) index into ``policies``
    policies: list
    v_star: float
    v_star_se: float = 0.0
    J: np.ndarray | None = None
    J_se: np.ndarray | None = None
    stats: SufficientStats | None = None
    G_diag: np.ndarray | None = None  # (N, d+p) diagonal of G after each episode
    extra: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.cost)

    @property
    def m(self) -> np.ndarray:
        return np.arange(1, self.N + 1)

    @property
    def regret_cum(self) -> np.ndarray:
        return np.cumsum(self.cost - self.v_star)

    def regret(self, N=None) -> float:
        N = self.N if N is None else N
        return float(self.regret_cum[N - 1])

    def to_csv(self, path) -> None:
        q = self.theta_tilde.shape[1] * self.theta_tilde.shape[2]
        header = ["m", "cycle", "phase", "cost", "regret_cum"]
        header += [f"theta_tilde_{i + 1}" for i in range(q)] + ["lambda_min"]
        reg = self.regret_cum
        flat = self.theta_tilde.reshape(self.N, -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.N):
                w.writerow([i + 1, int(self.cycle[i]), "explore" if self.explore[i] else "exploit",
                            repr(float(self.cost[i])), repr(float(reg[i]))]
                           + [repr(float(v)) for v in flat[i]] + [repr(float(self.lambda_min[i]))])

    def summary(self) -> dict:
        out = {"seed": self.seed, "n_episodes": self.N, "v_star": self.v_star,
               "v_star_se": self.v_star_se, "regret": self.regret(),
               "n_exploration": int(self.explore.sum())}
        if self.J is not None:
            noise, expl, expt = regret_decompose(self)
            out["decomposition"] = {"noise": noise, "exploration": expl, "exploitation": expt}
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary())


def regret_decompose(ledger: RegretLedger):
    """``(noise, exploration, exploitation)`` parts of ``R(N)``.

    ``J(psi_theta; theta)`` is identified with ``V*`` so the three parts add
    up to ``R(N)`` up to rounding.
    """
    if ledger.J is None:
        raise ValueError("ledger has no policy values; run evaluate_policy_values first")
    J = ledger.J
    noise = float(np.sum(ledger.cost - J))
    explore = float(np.sum(J[ledger.explore] - ledger.v_star))
    exploit = float(np.sum(J[~ledger.explore] - ledger.v_star))
    return noise, explore, exploit


def evaluate_policy_values(ledgers, config: PegeConfig, n_mc: int = 2000):
    """Fill ``ledger.J`` with ``J(Psi_m; theta)`` for every episode.

    Affine policies under quadratic costs are evaluated exactly; otherwise all
    distinct policies of a run share ``n_mc`` evaluation episodes drawn from a
    namespace the algorithm never touches.
    """
    single = isinstance(ledgers, RegretLedger)
    ledgers = [ledgers] if single else list(ledgers)
    th, grid, cost, x0 = config.theta, config.grid, config.cost, config.x0
    uniq = {}
    for led in ledgers:
        for p in led.policies:
            uniq.setdefault(id(p), p)
    exact = cost.variant == "quadratic" and all(
        isinstance(p.tabulate(grid), AffineTable) for p in uniq.values())
    if exact:
        vals = dict(zip(uniq, affine_exact_values(th, list(uniq.values()), cost, grid, x0)))
        for led in ledgers:
            led.J = np.array([vals[id(p)] for p in led.policies])[led.policy_id]
            led.J_se = np.zeros(led.N)
    else:
        if n_mc < 2:
            raise ValueError("n_mc must be at least 2")
        for led in ledgers:
            noise = episode_noise(led.seed, range(n_mc), grid, th.d, EVAL_NS)
            costs = mc_costs(th, led.policies, cost, grid, x0, noise)
            led.J = costs.mean(axis=1)[led.policy_id]
            led.J_se = (costs.std(axis=1, ddof=1) / np.sqrt(n_mc))[led.policy_id]
    return ledgers[0] if single else ledgers


# --------------------------------------------------------------------------
# the algorithm


def _key(theta_mat) -> bytes:
    return np.round(np.asarray(theta_mat) * 1e12).astype(np.int64).tobytes()


def run_pege_batch(config: PegeConfig, seeds, v_star: OptimalValue | None = None,
                   evaluate: bool = False, n_eval: int = 2000, record_diag: bool = False,
                   history: tuple | None = None):
    """Run the algorithm for several seeds in lockstep; one ledger per seed.

    ``history = (seed, n)`` makes the first ``n`` episodes of every run use the
    noise of ``seed``, so all runs share one history before branching.
    """
    seeds = [int(s) for s in seeds]
    nS = len(seeds)
    th, grid, cost = config.theta, config.grid, config.cost
    d, p = th.d, th.p
    q = d + p
    N = config.n_episodes
    if v_star is None:
        v_star = estimate_optimal_value(th, cost, grid, x0=config.x0, seed=config.seed,
                                        hjb_domain=config.hjb_domain)
    sched = config.schedule
    cycles = sched.cycles(N)
    explore_mask = np.zeros(N, dtype=bool) if config.greedy_only else sched.exploration_mask(N)
    expl_policy = None if config.greedy_only else make_exploration_policy(
        config.exploration, d, cost)

    base = init_stats(config.theta0_hat, config.V0)
    G = np.broadcast_to(base.G, (nS, q, q)).copy()
    Sacc = np.broadcast_to(base.S, (nS, q, d)).copy()

    run_pols = [[] for _ in range(nS)]  # distinct policies per run
    run_ids = [dict() for _ in range(nS)]  # id(policy) -> local index
    cache = {}

    def synthesize(mats):
        """Greedy policies for a list of parameter matrices, through the cache."""
        keys = [_key(mth) for mth in mats]
        todo = {}
        for kk, mth in zip(keys, mats):
            if kk not in cache and kk not in todo:
                todo[kk] = mth
        if todo:
            new = greedy_policies(cost, [ParamTheta.from_matrix(mth, d) for mth in todo.values()],
                                  grid, config.hjb_domain)
            cache.update(zip(todo.keys(), new))
        return [cache[kk] for kk in keys]

    base_hat = map_estimate(base)
    theta_bar = np.stack([truncate(config.truncation, base_hat)] * nS)
    theta_hat_now = np.broadcast_to(base_hat, (nS, d, q)).copy()
    greedy = synthesize(list(theta_bar))

    costs = np.empty((nS, N))
    th_used = np.empty((nS, N, d, q))
    th_hat = np.empty((nS, N, d, q))
    lam = np.empty((nS, N))
    pid = np.empty((nS, N), dtype=int)
    gdiag = np.empty((nS, N, q)) if record_diag else None
    dt = grid.dt

    for i in range(N):
        m = i + 1
        explore = explore_mask[i]
        pols = [expl_policy] * nS if explore else greedy
        src = seeds if history is None or i >= history[1] else [history[0]] * nS
        noise = draw_noise([episode_rng(s, i, ALGO_NS) for s in src], grid, d)
        x, a = simulate_paths(th, pols, grid, config.x0, noise)
        c = path_costs(cost, grid, x, a)
        if not np.all(np.isfinite(c)):
            bad = int(np.argmax(~np.isfinite(c)))
            raise InvalidEpisodeCost(f"episode {m} of seed {seeds[bad]} has infinite cost")
        costs[:, i] = c
        th_used[:, i] = theta_bar
        for s in range(nS):
            key = id(pols[s])
            if key not in run_ids[s]:
                run_ids[s][key] = len(run_pols[s])
                run_pols[s].append(pols[s])
            pid[s, i] = run_ids[s][key]
        # sufficient statistics over every episode, left-endpoint increments
        z = np.concatenate([x[:, :-1], a[:, :-1]], axis=2)
        G += np.einsum("ski,skj->sij", z, z) * dt
        G = 0.5 * (G + np.swapaxes(G, 1, 2))
        Sacc += np.einsum("ski,skj->sij", z, np.diff(x, axis=1))
        lam[:, i] = np.linalg.eigvalsh(G)[:, 0]
        if record_diag:
            gdiag[:, i] = np.diagonal(G, axis1=1, axis2=2)
        for s in range(nS):
            theta_hat_now[s] = map_estimate(SufficientStats(G[s], Sacc[s], m))
        th_hat[:, i] = theta_hat_now

        # the next episode's greedy parameter
        next_explores = i + 1 < N and explore_mask[i + 1]
        refresh = (explore and not config.greedy_only) or (
            not explore and (config.optional_update or config.greedy_only))
        if refresh and i + 1 < N and not next_explores:
            theta_bar = np.stack([truncate(config.truncation, t) for t in theta_hat_now])
            greedy = synthesize(list(theta_bar))

    ledgers = []
    for s, seed in enumerate(seeds):
        led = RegretLedger(seed=seed, cycle=cycles.copy(), explore=explore_mask.copy(),
                           cost=costs[s], theta_tilde=th_used[s], theta_hat=th_hat[s],
                           lambda_min=lam[s], policy_id=pid[s], policies=run_pols[s],
                           v_star=v_star.value, v_star_se=v_star.se,
                           stats=SufficientStats(G[s].copy(), Sacc[s].copy(), N),
                           G_diag=None if gdiag is None else gdiag[s])
        ledgers.append(led)
    if evaluate:
        evaluate_policy_values(ledgers, config, n_eval)
    return ledgers


def run_pege(config: PegeConfig, **kw) -> RegretLedger:
    """Single run with ``config.seed``."""
    return run_pege_batch(config, [config.seed], **kw)[0]
