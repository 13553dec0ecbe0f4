"""Scalar-state HJB solver for the entropy-regularised cost.

Solves, backwards from ``V(T, x) = g(x)`` on ``[-L, L]``,

    dV/dt + 1/2 V_xx + A x V_x - h*(-B' V_x - fbar0(t, x)) = 0

with an explicit finite-difference scheme, and builds the feedback
``psi(t, x) = softmax(-B' V_x(t, x) - fbar0(t, x))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feedback import Policy
from .model import EntropyCost, ParamTheta, grad_h_star, h_star
from .sde import TimeGrid

CFL = 0.4


class CFLError(ValueError):
    pass


class HJBBlowup(FloatingPointError):
    pass


@dataclass(frozen=True)
class HjbSolution:
    times: np.ndarray  # (n+1,)
    x_grid: np.ndarray  # (n_x,)
    V: np.ndarray  # (n+1, n_x)
    dVdx: np.ndarray  # (n+1, n_x)

    @property
    def L(self) -> float:
        return float(self.x_grid[-1])

    @property
    def dx(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    def to_csv(self, path, field="V") -> None:
        table = getattr(self, field)
        header = ",".join(["t"] + [f"x={x:.6g}" for x in self.x_grid])
        np.savetxt(path, np.column_stack([self.times, table]), delimiter=",",
                   header=header, comments="", fmt="%.17g")


def _gradient(V, dx):
    """Centered differences inside, second-order one-sided at both ends."""
    G = np.empty_like(V)
    G[..., 1:-1] = (V[..., 2:] - V[..., :-2]) / (2 * dx)
    G[..., 0] = (-3 * V[..., 0] + 4 * V[..., 1] - V[..., 2]) / (2 * dx)
    G[..., -1] = (3 * V[..., -1] - 4 * V[..., -2] + V[..., -3]) / (2 * dx)
    return G


def hjb_grid(T: float, L: float = 4.0, n_x: int = 201, min_steps: int = 1) -> TimeGrid:
    """Coarsest time grid meeting the CFL bound for the given space grid."""
    dx = 2 * L / (n_x - 1)
    return TimeGrid(T, max(min_steps, int(np.ceil(T / (CFL * dx * dx)))))


def solve_hjb_batch(spec: EntropyCost, thetas, grid: TimeGrid, L: float = 4.0, n_x: int = 201):
    """Solve the HJB equation for several parameters on shared grids."""
    if any(th.d != 1 for th in thetas):
        raise ValueError("the HJB solver handles scalar states only (d = 1)")
    if L <= 0:
        raise ValueError("L must be positive")
    if n_x < 51 or n_x % 2 == 0:
        raise ValueError("n_x must be odd and at least 51")
    x = np.linspace(-L, L, n_x)
    dx = x[1] - x[0]
    n, dt = grid.n_steps, grid.dt
    if grid.T > 0 and dt > CFL * dx * dx:
        raise CFLError(
            f"dt={dt:.3g} exceeds {CFL} dx^2={CFL * dx * dx:.3g}; "
            f"use at least {int(np.ceil(grid.T / (CFL * dx * dx)))} time steps or a coarser x grid")
    A = np.array([th.A[0, 0] for th in thetas])[:, None]  # (nb, 1)
    B = np.stack([th.B[0] for th in thetas])  # (nb, p)
    nb = len(thetas)
    times = grid.times
    xcol = x[:, None]
    drift = A * x  # (nb, n_x)
    fwd = drift > 0

    V = np.empty((nb, n + 1, n_x))
    V[:, n] = spec.g(xcol)
    if grid.T == 0:
        V[:] = V[:, n:n + 1]
    else:
        Vk = V[:, n].copy()
        for k in range(n, 0, -1):
            Vx = _gradient(Vk, dx)
            inner = Vk[:, 1:-1]
            lap = (Vk[:, 2:] - 2 * inner + Vk[:, :-2]) / (dx * dx)
            up = np.where(fwd[:, 1:-1], (Vk[:, 2:] - inner) / dx, (inner - Vk[:, :-2]) / dx)
            z = -B[:, None, :] * Vx[:, 1:-1, None] - spec.fbar0(times[k], xcol[1:-1])
            new = np.empty_like(Vk)
            new[:, 1:-1] = inner + dt * (0.5 * lap + drift[:, 1:-1] * up - h_star(z))
            # zero third difference: V_x is extrapolated linearly to the boundary
            new[:, 0] = 3 * new[:, 1] - 3 * new[:, 2] + new[:, 3]
            new[:, -1] = 3 * new[:, -2] - 3 * new[:, -3] + new[:, -4]
            Vk = new
            V[:, k - 1] = Vk
    if not np.all(np.isfinite(V)):
        raise HJBBlowup("HJB value became non-finite; refine the time grid")
    dV = _gradient(V, dx)
    return [HjbSolution(times, x, V[i], dV[i]) for i in range(nb)]


def solve_hjb_entropy(spec: EntropyCost, theta: ParamTheta, grid: TimeGrid,
                      x_domain=(4.0, 201)) -> HjbSolution:
    L, n_x = x_domain
    return solve_hjb_batch(spec, [theta], grid, L, n_x)[0]


def hjb_residual(sol: HjbSolution, theta: ParamTheta, spec: EntropyCost, inner: float = 0.5):
    """Max residual of the HJB equation on ``|x| <= inner * L``.

    Derivatives use stencils independent of the solver's: a centred time
    difference and fourth-order centred space differences.
    """
    V, x, t = sol.V, sol.x_grid, sol.times
    dx = sol.dx
    dt = t[1] - t[0]
    sl = slice(2, -2)
    Vt = (V[2:, sl] - V[:-2, sl]) / (2 * dt)
    Vm = V[1:-1]
    Vx = (-Vm[:, 4:] + 8 * Vm[:, 3:-1] - 8 * Vm[:, 1:-3] + Vm[:, :-4]) / (12 * dx)
    Vxx = (-Vm[:, 4:] + 16 * Vm[:, 3:-1] - 30 * Vm[:, 2:-2] + 16 * Vm[:, 1:-3] - Vm[:, :-4]) / (
        12 * dx * dx)
    xs = x[sl]
    A = theta.A[0, 0]
    z = -theta.B[0][None, None, :] * Vx[..., None] - spec.fbar0(t[1:-1, None], xs[:, None])[None]
    res = Vt + 0.5 * Vxx + A * xs * Vx - h_star(z)
    mask = np.abs(xs) <= inner * sol.L
    return float(np.abs(res[:, mask]).max())


class EntropyTable:
    """``dV/dx`` on the nodes of a simulation grid, for batched evaluation."""

    def __init__(self, x_grid, dvdx, b, fbar0):
        self.x_grid = x_grid
        self.dvdx = dvdx  # (n+1, n_x)
        self.b = b  # (p,)
        self.fbar0 = fbar0

    @staticmethod
    def stack(tables, grid):
        x = tables[0].x_grid
        f0 = tables[0].fbar0
        for t in tables[1:]:
            if not np.array_equal(t.x_grid, x):
                raise ValueError("stacked entropy policies need one x grid")
            if not (np.array_equal(t.fbar0.c, f0.c) and np.array_equal(t.fbar0.W, f0.W)):
                raise ValueError("stacked entropy policies need one cost")
        dv = np.stack([t.dvdx for t in tables])
        b = np.stack([t.b for t in tables])
        L = x[-1]
        dx = x[1] - x[0]
        n_x = len(x)
        times = grid.times

        def evaluate(k, X, members):
            xc = np.clip(X[:, 0], -L, L)
            pos = (xc + L) / dx
            i = np.clip(np.floor(pos).astype(int), 0, n_x - 2)
            w = pos - i
            row = dv[members, k]
            s = np.arange(len(members))
            slope = row[s, i] * (1 - w) + row[s, i + 1] * w
            z = -slope[:, None] * b[members] - f0(times[k], xc[:, None])
            return grad_h_star(z)

        return evaluate


class EntropyPolicy(Policy):
    """Greedy feedback for the entropy-regularised cost."""

    kind = "entropy_greedy"

    def __init__(self, hjb: HjbSolution, theta: ParamTheta, spec: EntropyCost):
        self.hjb = hjb
        self.b = theta.B[0].copy()
        self.fbar0 = spec.fbar0
        slopes = np.diff(hjb.dVdx, axis=1) / hjb.dx  # (n+1, n_x-1)
        W = spec.fbar0.W[:, 0]
        grad_z = slopes[..., None] * self.b + W  # d z / dx up to sign
        lip = 0.5 * float(np.linalg.norm(grad_z, axis=-1).max())
        super().__init__(1, len(self.b), max(1.0, lip))

    def _dvdx(self, t, xc):
        h = self.hjb
        t = np.clip(np.asarray(t, dtype=float), h.times[0], h.times[-1])
        n = len(h.times) - 1
        if n == 0 or h.times[-1] == 0:
            tk, tw = np.zeros_like(t, dtype=int), np.zeros_like(t)
        else:
            tpos = t / h.times[-1] * n
            tk = np.clip(np.floor(tpos).astype(int), 0, n - 1)
            tw = tpos - tk
        pos = (xc + h.L) / h.dx
        i = np.clip(np.floor(pos).astype(int), 0, len(h.x_grid) - 2)
        w = pos - i
        D = h.dVdx
        tk1 = np.minimum(tk + 1, n)
        lo = D[tk, i] * (1 - w) + D[tk, i + 1] * w
        hi = D[tk1, i] * (1 - w) + D[tk1, i + 1] * w
        return lo * (1 - tw) + hi * tw

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x[..., 0], -self.hjb.L, self.hjb.L)
        t = np.broadcast_to(np.asarray(t, dtype=float), xc.shape)
        dv = self._dvdx(t, xc)
        z = -dv[..., None] * self.b - self.fbar0(t[..., None], xc[..., None])
        return grad_h_star(z)

    def tabulate(self, grid):
        h = self.hjb
        ts = grid.times
        if len(ts) == len(h.times) and np.array_equal(ts, h.times):
            table = h.dVdx
        else:
            n = len(h.times) - 1
            tpos = np.clip(ts / h.times[-1] * n, 0, n) if h.times[-1] > 0 else np.zeros_like(ts)
            tk = np.clip(np.floor(tpos).astype(int), 0, max(n - 1, 0))
            tw = (tpos - tk)[:, None]
            table = h.dVdx[tk] * (1 - tw) + h.dVdx[np.minimum(tk + 1, n)] * tw
        return EntropyTable(h.x_grid, table, self.b, self.fbar0)


def entropy_policy(hjb: HjbSolution, theta: ParamTheta, spec: EntropyCost) -> EntropyPolicy:
    return EntropyPolicy(hjb, theta, spec)


def entropy_policies(spec: EntropyCost, thetas, grid: TimeGrid, L=4.0, n_x=201):
    sols = solve_hjb_batch(spec, thetas, grid, L, n_x)
    return [EntropyPolicy(s, th, spec) for s, th in zip(sols, thetas)]
