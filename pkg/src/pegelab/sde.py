"""Euler-Maruyama simulation of episodes and Monte Carlo policy values.

Only observed quantities leave this module: the state path and the regressor
path ``Z = (X; psi(t, X))``.  The Brownian increments stay internal.

Every episode draws its noise from its own stream ``episode_rng(seed, index)``,
so runs are reproducible and Monte Carlo batches can be split arbitrarily.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import NamedTuple

import numpy as np

from .feedback import AffineTable, Policy, stack_evaluator
from .model import ParamTheta

log = logging.getLogger(__name__)

BLOWUP_LEVEL = 1e8
MC_CHUNK = 4096


class SimulationBlowup(FloatingPointError):
    """State became non-finite or exceeded the blowup guard."""

    def __init__(self, step: int, member: int = 0):
        super().__init__(f"state blew up at step {step} (batch member {member})")
        self.step = step
        self.member = member


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_n = T`` with ``dt = T / n_steps``.

    ``T = 0`` is accepted as a degenerate grid (used for terminal-only checks).
    """

    T: float
    n_steps: int

    def __post_init__(self):
        if self.T < 0 or self.n_steps < 1:
            raise ValueError("need T >= 0 and n_steps >= 1")

    @classmethod
    def default(cls, T: float) -> "TimeGrid":
        """Grid with ``dt = 1e-3 T``."""
        return cls(float(T), 1000)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class Trajectory:
    """Observed state path and regressor path of one episode."""

    times: np.ndarray
    x_path: np.ndarray  # (n+1, d)
    z_path: np.ndarray  # (n+1, d+p)

    @property
    def d(self) -> int:
        return self.x_path.shape[1]

    @property
    def actions(self) -> np.ndarray:
        return self.z_path[:, self.d:]

    def to_csv(self, path) -> None:
        d = self.d
        q = self.z_path.shape[1]
        header = ",".join(["t"] + [f"x_{i + 1}" for i in range(d)]
                          + [f"z_{i + 1}" for i in range(q)])
        data = np.column_stack([self.times, self.x_path, self.z_path])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass(frozen=True)
class EpisodeCost:
    value: float
    valid: bool


class MCValue(NamedTuple):
    """Monte Carlo estimate of ``J(psi; theta)``."""

    mean: float
    se: float
    n: int
    n_invalid: int = 0

    @property
    def valid(self) -> bool:
        return self.n_invalid == 0


def episode_rng(base_seed: int, index: int, namespace: int = 0) -> np.random.Generator:
    """Independent stream for episode ``index`` of run ``base_seed``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(namespace), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def draw_noise(rngs, grid: TimeGrid, d: int) -> np.ndarray:
    """Brownian increments ``sqrt(dt) * xi`` of shape (len(rngs), n, d)."""
    out = np.empty((len(rngs), grid.n_steps, d))
    for s, rng in enumerate(rngs):
        out[s] = rng.standard_normal((grid.n_steps, d))
    out *= np.sqrt(grid.dt)
    return out


def episode_noise(base_seed, indices, grid, d, namespace=0) -> np.ndarray:
    return draw_noise([episode_rng(base_seed, i, namespace) for i in indices], grid, d)


# --------------------------------------------------------------------------
# batch engine


def _as_list(obj, n):
    if isinstance(obj, (list, tuple)):
        if len(obj) != n:
            raise ValueError(f"expected {n} entries, got {len(obj)}")
        return list(obj)
    return [obj] * n


def _unique(objs):
    """Distinct objects (by identity) and the per-row index into them."""
    seen = {}
    uniq = []
    idx = np.empty(len(objs), dtype=int)
    for s, o in enumerate(objs):
        key = id(o)
        if key not in seen:
            seen[key] = len(uniq)
            uniq.append(o)
        idx[s] = seen[key]
    return uniq, idx


def simulate_paths(thetas, policies, grid: TimeGrid, x0, noise):
    """Advance a batch of episodes with the Euler-Maruyama scheme.

    Parameters
    ----------
    thetas, policies : object or list
        One shared value, or one per batch row.
    noise : ndarray (S, n, d) or None
        Brownian increments (already scaled by ``sqrt(dt)``); ``None``
        switches the noise off.  ``S`` is taken from ``noise`` when given.

    Returns
    -------
    x_path : (S, n+1, d) and a_path : (S, n+1, p)
    """
    if noise is None:
        S = len(thetas) if isinstance(thetas, (list, tuple)) else (
            len(policies) if isinstance(policies, (list, tuple)) else 1)
    else:
        S = noise.shape[0]
    thetas = _as_list(thetas, S)
    policies = _as_list(policies, S)
    d, p = thetas[0].d, thetas[0].p
    if any(pol.p != p or pol.d != d for pol in policies):
        raise ValueError("policy dimensions do not match theta")
    n, dt = grid.n_steps, grid.dt

    uth, th_idx = _unique(thetas)
    upol, pol_idx = _unique(policies)
    As = np.stack([th.A for th in uth])
    Bs = np.stack([th.B for th in uth])
    tables = [pol.tabulate(grid) for pol in upol]

    x_path = np.empty((S, n + 1, d))
    x_path[:, 0] = np.broadcast_to(np.asarray(x0, dtype=float), (S, d))

    with np.errstate(over="ignore", invalid="ignore"):
        if all(isinstance(t, AffineTable) for t in tables):
            a_path = _affine_run(As, Bs, th_idx, tables, pol_idx, x_path, noise, dt)
        else:
            a_path = _generic_run(As, Bs, th_idx, tables, pol_idx, x_path, noise, grid)

    bad = ~np.isfinite(x_path) | (np.abs(x_path) > BLOWUP_LEVEL)
    if bad.any():
        rows, steps = np.nonzero(bad.any(axis=2))
        first = np.argmin(steps)
        raise SimulationBlowup(int(steps[first]), int(rows[first]))
    return x_path, a_path


def _affine_run(As, Bs, th_idx, tables, pol_idx, x_path, noise, dt):
    S, n1, d = x_path.shape
    gains = np.stack([t.gain for t in tables])  # (P, n+1, p, d)
    offsets = np.stack([t.offset for t in tables])  # (P, n+1, p)
    # one closed-loop propagator per distinct (theta, policy) combination
    combos, cid = np.unique(np.stack([th_idx, pol_idx], axis=1), axis=0, return_inverse=True)
    cid = cid.ravel()
    A = As[combos[:, 0]]
    B = Bs[combos[:, 0]]
    K = gains[combos[:, 1], :-1]
    c = offsets[combos[:, 1], :-1]
    M = np.eye(d) + (A[:, None] + np.einsum("cip,ckpj->ckij", B, K)) * dt  # (C, n, d, d)
    bias = np.einsum("cip,ckp->cki", B, c) * dt  # (C, n, d)
    # time-major buffers keep each step's memory access contiguous
    xs = np.empty((n1, S, d))
    xs[0] = x_path[:, 0]
    dW = None if noise is None else np.ascontiguousarray(noise.transpose(1, 0, 2))
    if d == 1:
        if len(combos) == 1:
            Mm = M[0, :, 0, 0][:, None, None]  # broadcast over rows
            bm = bias[0, :, 0][:, None, None]
        else:
            Mm = np.ascontiguousarray(M[:, :, 0, 0][cid].T)[:, :, None]  # (n, S, 1)
            bm = np.ascontiguousarray(bias[:, :, 0][cid].T)[:, :, None]
        for k in range(n1 - 1):
            nxt = xs[k] * Mm[k]
            nxt += bm[k]
            if dW is not None:
                nxt += dW[k]
            xs[k + 1] = nxt
    else:
        for k in range(n1 - 1):
            nxt = np.einsum("sij,sj->si", M[cid, k], xs[k]) + bias[cid, k]
            if dW is not None:
                nxt += dW[k]
            xs[k + 1] = nxt
    x_path[:] = xs.transpose(1, 0, 2)
    if len(tables) == 1:
        return np.einsum("npd,snd->snp", gains[0], x_path) + offsets[0]
    if d == 1:
        return gains[pol_idx, :, :, 0] * x_path + offsets[pol_idx]
    return np.einsum("snpd,snd->snp", gains[pol_idx], x_path) + offsets[pol_idx]


def _generic_run(As, Bs, th_idx, tables, pol_idx, x_path, noise, grid):
    S, n1, d = x_path.shape
    evaluate = stack_evaluator(tables, grid)
    dt = grid.dt
    A = As[th_idx]
    B = Bs[th_idx]
    p = B.shape[2]
    a_path = np.empty((S, n1, p))
    X = x_path[:, 0].copy()
    for k in range(n1):
        a = evaluate(k, X, pol_idx)
        a_path[:, k] = a
        if k == n1 - 1:
            break
        X = X + (np.einsum("sij,sj->si", A, X) + np.einsum("sip,sp->si", B, a)) * dt
        if noise is not None:
            X = X + noise[:, k]
        x_path[:, k + 1] = X
    return a_path


def path_costs(spec, grid: TimeGrid, x_path, a_path) -> np.ndarray:
    """Left-endpoint quadrature of the running cost plus the terminal cost.

    Returns one value per batch row; ``inf`` marks an infeasible action.
    """
    t = grid.times[:-1]
    f = spec.running(t[None, :], x_path[:, :-1], a_path[:, :-1])
    run = f.sum(axis=1) * grid.dt
    return np.where(np.isfinite(run), run + spec.terminal(x_path[:, -1]), np.inf)


# --------------------------------------------------------------------------
# public single-episode API


def simulate_episode(theta: ParamTheta, policy: Policy, grid: TimeGrid, x0,
                     rng_stream: np.random.Generator | None = None,
                     noise_on: bool = True) -> Trajectory:
    """Simulate one episode and return its observed :class:`Trajectory`."""
    if policy.p != theta.p:
        raise ValueError(f"policy has p={policy.p}, theta has p={theta.p}")
    noise = None
    if noise_on:
        if rng_stream is None:
            raise ValueError("noise_on requires an rng stream")
        noise = draw_noise([rng_stream], grid, theta.d)
    x_path, a_path = simulate_paths([theta], [policy], grid, x0, noise)
    return Trajectory(grid.times, x_path[0], np.concatenate([x_path[0], a_path[0]], axis=1))


def simulate_batch(thetas, policies, grid, x0, rngs, noise_on=True):
    """List of trajectories for parallel episodes (one stream per episode)."""
    S = len(rngs)
    th0 = thetas[0] if isinstance(thetas, (list, tuple)) else thetas
    noise = draw_noise(rngs, grid, th0.d) if noise_on else None
    if noise is None:
        thetas = _as_list(thetas, S)
    x_path, a_path = simulate_paths(thetas, policies, grid, x0, noise)
    z = np.concatenate([x_path, a_path], axis=2)
    return [Trajectory(grid.times, x_path[s], z[s]) for s in range(S)]


def episode_cost(traj: Trajectory, spec, policy: Policy | None = None) -> EpisodeCost:
    """Realised cost of a recorded episode (actions read from ``traj``)."""
    n = len(traj.times) - 1
    grid = TimeGrid(float(traj.times[-1]), n)
    val = float(path_costs(spec, grid, traj.x_path[None], traj.actions[None])[0])
    return EpisodeCost(val, bool(np.isfinite(val)))


def _summarise(costs) -> MCValue:
    costs = np.asarray(costs, dtype=float)
    bad = int(np.sum(~np.isfinite(costs)))
    n = costs.size
    if bad:
        return MCValue(float("inf"), float("nan"), n, bad)
    return MCValue(float(costs.mean()), float(costs.std(ddof=1) / np.sqrt(n)), n, 0)


def mc_costs(theta, policies, spec, grid, x0, noise, chunk=MC_CHUNK) -> np.ndarray:
    """Episode costs of every policy in ``policies`` on shared noise (CRN).

    Returns an array (len(policies), n_mc).
    """
    if not isinstance(policies, (list, tuple)):
        policies = [policies]
    n_mc = noise.shape[0]
    P = len(policies)
    out = np.empty((P, n_mc))
    rows = [(j, i) for j in range(P) for i in range(n_mc)]
    for start in range(0, len(rows), chunk):
        block = rows[start:start + chunk]
        pj = np.array([r[0] for r in block])
        ii = np.array([r[1] for r in block])
        x, a = simulate_paths(theta, [policies[j] for j in pj], grid, x0, noise[ii])
        out[pj, ii] = path_costs(spec, grid, x, a)
    return out


def mc_policy_value(theta: ParamTheta, policy: Policy, spec, grid: TimeGrid, n_mc: int,
                    seed: int, x0=None, namespace: int = 0) -> MCValue:
    """Estimate ``J(psi; theta)`` over ``n_mc`` seeded episodes.

    Episode ``i`` uses ``episode_rng(seed, i, namespace)``; two calls with the
    same seed therefore share their noise (common random numbers).
    """
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    x0 = np.zeros(theta.d) if x0 is None else x0
    costs = np.empty(n_mc)
    for start in range(0, n_mc, MC_CHUNK):
        idx = range(start, min(n_mc, start + MC_CHUNK))
        noise = episode_noise(seed, idx, grid, theta.d, namespace)
        costs[start:start + len(idx)] = mc_costs(theta, [policy], spec, grid, x0, noise)[0]
    res = _summarise(costs)
    if not res.valid:
        log.warning("%d of %d episodes had infinite cost", res.n_invalid, n_mc)
    return res


def affine_exact_values(theta: ParamTheta, policies, spec, grid: TimeGrid, x0,
                        noise_on: bool = True) -> np.ndarray:
    """Exact expected cost of the Euler scheme under each affine policy.

    Propagates the first and second moments of the discretised closed loop,
    so the values carry no Monte Carlo error and match the discretisation
    used by :func:`simulate_paths`.  Quadratic costs only.
    """
    if getattr(spec, "variant", None) != "quadratic":
        raise TypeError("exact evaluation needs a quadratic cost")
    tabs = [pol.tabulate(grid) for pol in policies]
    if not all(isinstance(t, AffineTable) for t in tabs):
        raise TypeError("exact evaluation needs affine policies")
    gains = np.stack([t.gain for t in tabs])  # (P, n+1, p, d)
    offsets = np.stack([t.offset for t in tabs])  # (P, n+1, p)
    P = len(tabs)
    dt = grid.dt
    d = theta.d
    A, B = theta.A, theta.B
    Q, R = spec.Q, spec.R
    m = np.broadcast_to(np.asarray(x0, dtype=float).reshape(d), (P, d)).copy()
    Sig = np.zeros((P, d, d))
    noise_cov = dt * np.eye(d) if noise_on else np.zeros((d, d))
    total = np.zeros(P)
    # closed-loop matrices for all steps at once
    M = np.eye(d) + (A + B @ gains[:, :-1]) * dt  # (P, n, d, d)
    bias = np.einsum("ip,tkp->tki", B, offsets[:, :-1]) * dt
    RK = R @ gains  # (P, n+1, p, d)
    KRK = np.swapaxes(gains, -1, -2) @ RK  # K'RK
    Rc = np.einsum("pq,tkq->tkp", R, offsets)
    cRc = np.einsum("tkp,tkp->tk", offsets, Rc)
    KRc = np.einsum("tkpd,tkp->tkd", gains, Rc)  # K'Rc
    Qe = Q + KRK  # (P, n+1, d, d)
    for k in range(grid.n_steps):
        Exx = Sig + m[:, :, None] * m[:, None, :]
        # E[x'Qx + a'Ra] with a = Kx + c
        total += dt * (np.einsum("tij,tij->t", Qe[:, k], Exx)
                       + 2 * np.einsum("td,td->t", KRc[:, k], m) + cRc[:, k])
        Mk = M[:, k]
        m = np.einsum("tij,tj->ti", Mk, m) + bias[:, k]
        Sig = Mk @ Sig @ np.swapaxes(Mk, -1, -2) + noise_cov
    Exx = Sig + m[:, :, None] * m[:, None, :]
    total += np.einsum("ij,tij->t", spec.G, Exx)
    return total


def affine_exact_value(theta: ParamTheta, policy: Policy, spec, grid: TimeGrid, x0,
                       noise_on: bool = True) -> float:
    """Single-policy form of :func:`affine_exact_values`."""
    return float(affine_exact_values(theta, [policy], spec, grid, x0, noise_on)[0])
