"""Exploration policy, LQ greedy policy (Riccati) and the information value."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feedback import AffinePolicy, ExplorationPolicy, Policy
from .model import ParamTheta, QuadraticCost, in_simplex
from .sde import TimeGrid, episode_noise, simulate_paths


class ExplorationError(ValueError):
    """Actions fail to span the action space, so nothing is learnt about some directions."""


class RiccatiError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ExplorationSpec:
    actions: np.ndarray  # (p, p), one action per row
    partition: np.ndarray  # (p + 1,)

    def __post_init__(self):
        actions = np.atleast_2d(np.asarray(self.actions, dtype=float))
        partition = np.asarray(self.partition, dtype=float)
        p = actions.shape[1]
        if actions.shape[0] != p:
            raise ExplorationError(f"need exactly p={p} actions, got {actions.shape[0]}")
        if partition.shape != (p + 1,) or partition[0] != 0 or np.any(np.diff(partition) <= 0):
            raise ValueError("partition must be 0 = t_0 < t_1 < ... < t_p = T")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "partition", partition)

    @classmethod
    def uniform(cls, actions, T: float):
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        return cls(actions, np.linspace(0.0, T, actions.shape[0] + 1))


def make_exploration_policy(spec: ExplorationSpec, d: int, cost=None) -> ExplorationPolicy:
    """Piecewise-constant exploration policy through linearly independent actions.

    If ``cost`` is an entropy cost, every action must lie in the simplex interior.
    """
    smin = np.linalg.svd(spec.actions, compute_uv=False).min()
    if smin <= 1e-10:
        raise ExplorationError(
            "exploration actions are linearly dependent: some nonzero (u, v) has "
            "u'x + v'psi(t, x) = 0, so the regressor Gram matrix stays singular")
    if getattr(cost, "variant", None) == "entropy":
        if not (np.all(in_simplex(spec.actions)) and np.all(spec.actions > 0)):
            raise ExplorationError("entropy exploration actions must lie in the simplex interior")
    return ExplorationPolicy(spec.actions, spec.partition, d)


# --------------------------------------------------------------------------
# Riccati


@dataclass(frozen=True)
class RiccatiSolution:
    times: np.ndarray
    P: np.ndarray  # (n+1, d, d)
    q: np.ndarray  # (n+1,) value offset, V(t, x) = x'P_t x + q_t

    def value(self, x0) -> float:
        x0 = np.asarray(x0, dtype=float)
        return float(x0 @ self.P[0] @ x0 + self.q[0])

    def to_csv(self, path) -> None:
        d = self.P.shape[1]
        cols = [f"P_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        data = np.column_stack([self.times, self.P.reshape(len(self.times), -1), self.q])
        np.savetxt(path, data, delimiter=",", header=",".join(["t"] + cols + ["q"]),
                   comments="", fmt="%.17g")


def _riccati_rhs(P, A, BRB, Q):
    # dP/dt = P B R^-1 B' P - A'P - PA - Q
    AtP = np.swapaxes(A, -1, -2) @ P
    return P @ BRB @ P - AtP - np.swapaxes(AtP, -1, -2) - Q


def solve_riccati_batch(spec: QuadraticCost, thetas, grid: TimeGrid):
    """Backward RK4 for a batch of parameters sharing one cost and grid."""
    A = np.stack([th.A for th in thetas])
    B = np.stack([th.B for th in thetas])
    Rinv = np.linalg.inv(spec.R)
    BRB = B @ Rinv @ np.swapaxes(B, -1, -2)
    Q = spec.Q
    n, h = grid.n_steps, grid.dt
    nb, d = A.shape[0], A.shape[1]
    if d == 1:
        P, q = _riccati_scalar(A[:, 0, 0], BRB[:, 0, 0], float(Q[0, 0]), float(spec.G[0, 0]), n, h)
        P = P[..., None, None]
        return _finish_riccati(P, q, grid)
    P = np.empty((nb, n + 1, d, d))
    q = np.empty((nb, n + 1))
    P[:, n] = spec.G
    q[:, n] = 0.0
    Pk = np.broadcast_to(spec.G, (nb, d, d)).copy()
    qk = np.zeros(nb)
    # integrate in reversed time s = T - t:  dP/ds = -rhs,  dq/ds = tr(P)
    for k in range(n, 0, -1):
        k1 = -_riccati_rhs(Pk, A, BRB, Q)
        P2 = Pk + 0.5 * h * k1
        k2 = -_riccati_rhs(P2, A, BRB, Q)
        P3 = Pk + 0.5 * h * k2
        k3 = -_riccati_rhs(P3, A, BRB, Q)
        P4 = Pk + h * k3
        k4 = -_riccati_rhs(P4, A, BRB, Q)
        tr = lambda M: np.trace(M, axis1=-2, axis2=-1)  # noqa: E731
        qk = qk + h / 6.0 * (tr(Pk) + 2 * tr(P2) + 2 * tr(P3) + tr(P4))
        Pk = Pk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Pk = 0.5 * (Pk + np.swapaxes(Pk, -1, -2))
        P[:, k - 1] = Pk
        q[:, k - 1] = qk
    return _finish_riccati(P, q, grid)


def _riccati_scalar(a, s, Q, G, n, h):
    """RK4 for the scalar case, vectorised over the batch."""
    P = np.empty((len(a), n + 1))
    q = np.empty((len(a), n + 1))
    P[:, n] = G
    q[:, n] = 0.0
    Pk = np.full(len(a), G)
    qk = np.zeros(len(a))
    two_a = 2 * a

    def f(p):  # dP/ds in reversed time
        return two_a * p + Q - s * p * p

    for k in range(n, 0, -1):
        k1 = f(Pk)
        P2 = Pk + 0.5 * h * k1
        k2 = f(P2)
        P3 = Pk + 0.5 * h * k2
        k3 = f(P3)
        P4 = Pk + h * k3
        k4 = f(P4)
        qk = qk + h / 6.0 * (Pk + 2 * P2 + 2 * P3 + P4)
        Pk = Pk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        P[:, k - 1] = Pk
        q[:, k - 1] = qk
    return P, q


def _finish_riccati(P, q, grid):
    nb = P.shape[0]
    if not np.all(np.isfinite(P)):
        raise RiccatiError("Riccati solution is not finite (horizon too long or unstable)")
    lam = np.linalg.eigvalsh(P).min()
    if lam < -1e-8:
        raise RiccatiError(f"Riccati solution lost positive semidefiniteness (min eig {lam:.3g})")
    times = grid.times
    return [RiccatiSolution(times, P[i], q[i]) for i in range(nb)]


def solve_riccati(spec: QuadraticCost, theta: ParamTheta, grid: TimeGrid) -> RiccatiSolution:
    """Solve ``P' = P B R^-1 B' P - A'P - PA - Q``, ``P_T = G`` backwards with RK4.

    Also returns ``q_t = int_t^T tr(P_s) ds`` so that ``x'P_0x + q_0`` is the
    optimal value with unit diffusion.
    """
    return solve_riccati_batch(spec, [theta], grid)[0]


def _max_spectral_norm(K) -> float:
    if min(K.shape[1:]) == 1:  # vector case: spectral norm is the Euclidean norm
        return float(np.sqrt((K * K).sum(axis=(1, 2)).max()))
    return float(np.linalg.norm(K, ord=2, axis=(1, 2)).max())


def lq_policy(riccati: RiccatiSolution, theta: ParamTheta, spec: QuadraticCost) -> AffinePolicy:
    """Greedy LQ feedback ``psi(t, x) = -R^-1 B' P_t x``."""
    K = -np.linalg.solve(spec.R, theta.B.T) @ riccati.P  # (n+1, p, d)
    budget = _max_spectral_norm(K)
    offsets = np.zeros(K.shape[:2])
    return AffinePolicy(riccati.times, K, offsets, lipschitz_budget=budget, kind="lq_greedy")


def lq_policies(spec: QuadraticCost, thetas, grid: TimeGrid):
    sols = solve_riccati_batch(spec, thetas, grid)
    return [lq_policy(s, th, spec) for s, th in zip(sols, thetas)]


def compute_information_value(policy: Policy, theta: ParamTheta, grid: TimeGrid, n_mc: int,
                              seed: int, x0=None, namespace: int = 0, return_matrix=False):
    """Smallest eigenvalue of the Monte Carlo mean of ``int Z Z' dt``."""
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    x0 = np.zeros(theta.d) if x0 is None else x0
    q = theta.d + theta.p
    acc = np.zeros((q, q))
    chunk = 4096
    for start in range(0, n_mc, chunk):
        idx = range(start, min(n_mc, start + chunk))
        noise = episode_noise(seed, idx, grid, theta.d, namespace)
        x, a = simulate_paths(theta, policy, grid, x0, noise)
        z = np.concatenate([x[:, :-1], a[:, :-1]], axis=2)
        acc += np.einsum("ski,skj->ij", z, z) * grid.dt
    M = acc / n_mc
    lam = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    return (lam, M) if return_matrix else lam
