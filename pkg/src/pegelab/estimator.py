"""Matrix-normal posterior bookkeeping for the drift parameter.

The posterior after ``m`` episodes is ``MN(theta_hat, I_d, V)`` with

    G = V^{-1} = V0^{-1} + sum_n int Z Z' dt
    S = (theta0 V0^{-1})' + sum_n int Z dX'
    theta_hat = (G^{-1} S)'

Only the observed path enters: the stochastic integral uses left-endpoint
increments of ``X``.
"""
from __future__ import annotations

from dataclasses import dataclass
import json
import logging

import numpy as np
from scipy import linalg

from .model import ParamBox

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition


@dataclass(frozen=True)
class SufficientStats:
    G: np.ndarray  # (q, q) precision
    S: np.ndarray  # (q, d)
    m: int = 0

    @property
    def d(self) -> int:
        return self.S.shape[1]

    @property
    def q(self) -> int:
        return self.S.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "m": self.m,
            "G": self.G.ravel().tolist(),
            "S": self.S.ravel().tolist(),
            "theta_hat": map_estimate(self).ravel().tolist(),
            "lambda_min": min_eigen(self),
        })


def init_stats(theta0_hat, V0) -> SufficientStats:
    """Prior ``MN(theta0_hat, I, V0)`` as sufficient statistics."""
    theta0_hat = np.atleast_2d(np.asarray(theta0_hat, dtype=float))
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    q = theta0_hat.shape[1]
    if V0.shape != (q, q):
        raise ValueError(f"V0 must be {q}x{q}")
    if not np.allclose(V0, V0.T, atol=1e-12):
        raise ValueError("V0 must be symmetric")
    try:
        c = linalg.cho_factor(V0)
    except linalg.LinAlgError as exc:
        raise ValueError("V0 must be positive definite") from exc
    if np.linalg.eigvalsh(V0).min() <= 0:
        raise ValueError("V0 must be positive definite")
    G = linalg.cho_solve(c, np.eye(q))
    G = 0.5 * (G + G.T)
    S = G @ theta0_hat.T  # (theta0 V0^{-1})' with V0 symmetric
    return SufficientStats(G, S, 0)


def path_increments(x_path, z_path, dt):
    """``(int Z Z' dt, int Z dX')`` with left endpoints; leading batch axes allowed."""
    z = z_path[..., :-1, :]
    dx = np.diff(x_path, axis=-2)
    dG = np.einsum("...ki,...kj->...ij", z, z) * dt
    dS = np.einsum("...ki,...kj->...ij", z, dx)
    return dG, dS


def update_stats(stats: SufficientStats, traj) -> SufficientStats:
    """Add one observed episode."""
    dt = float(traj.times[1] - traj.times[0])
    dG, dS = path_increments(traj.x_path, traj.z_path, dt)
    return apply_increments(stats, dG, dS)


def apply_increments(stats: SufficientStats, dG, dS) -> SufficientStats:
    if dG.shape != stats.G.shape or dS.shape != stats.S.shape:
        raise ValueError("trajectory dimensions do not match the statistics")
    G = stats.G + dG
    return SufficientStats(0.5 * (G + G.T), stats.S + dS, stats.m + 1)


def _solve_spd(G, rhs):
    try:
        return linalg.cho_solve(linalg.cho_factor(G), rhs)
    except linalg.LinAlgError:
        q = G.shape[0]
        jitter = 1e-12 * np.trace(G) / q
        log.warning("Cholesky failed; retrying with jitter %.3g", jitter)
        try:
            return linalg.cho_solve(linalg.cho_factor(G + jitter * np.eye(q)), rhs)
        except linalg.LinAlgError as exc:
            raise NumericalError("precision matrix is not positive definite",
                                 condition=float(np.linalg.cond(G))) from exc


def map_estimate(stats: SufficientStats) -> np.ndarray:
    """Posterior mode ``theta_hat`` of shape (d, d + p)."""
    return _solve_spd(stats.G, stats.S).T


def posterior_covariance(stats: SufficientStats) -> np.ndarray:
    return _solve_spd(stats.G, np.eye(stats.q))


def min_eigen(stats: SufficientStats) -> float:
    G = 0.5 * (stats.G + stats.G.T)
    return float(linalg.eigvalsh(G, subset_by_index=[0, 0])[0])


@dataclass(frozen=True)
class TruncationSpec:
    """Truncation onto the box ``K``; ``mode`` is ``"clamp"`` or ``"fallback"``."""

    K_lower: np.ndarray
    K_upper: np.ndarray
    mode: str = "clamp"
    theta_fallback: np.ndarray | None = None

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.K_lower, dtype=float))
        hi = np.atleast_2d(np.asarray(self.K_upper, dtype=float))
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("K must be a nonempty box")
        if self.mode not in ("clamp", "fallback"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        object.__setattr__(self, "K_lower", lo)
        object.__setattr__(self, "K_upper", hi)
        if self.mode == "fallback":
            if self.theta_fallback is None:
                raise ValueError("fallback mode needs theta_fallback")
            fb = np.atleast_2d(np.asarray(self.theta_fallback, dtype=float))
            if not self.contains(fb):
                raise ValueError("fallback parameter must lie in K")
            object.__setattr__(self, "theta_fallback", fb)

    @classmethod
    def around(cls, box: ParamBox, eta: float = 0.5, mode: str = "clamp", theta_fallback=None):
        """``K`` = the box widened by ``eta`` on every side."""
        if eta <= 0:
            raise ValueError("eta must be positive")
        return cls(box.lower - eta, box.upper + eta, mode, theta_fallback)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.K_lower) and np.all(theta <= self.K_upper))

    def strictly_contains(self, box: ParamBox) -> bool:
        return bool(np.all(self.K_lower < box.lower) and np.all(self.K_upper > box.upper))


def truncate(spec: TruncationSpec, theta_hat, V=None) -> np.ndarray:
    """Map ``theta_hat`` into ``K``; the identity on ``K``.

    ``V`` is accepted for interface symmetry; neither built-in mode uses it.
    """
    theta_hat = np.atleast_2d(np.asarray(theta_hat, dtype=float))
    if spec.contains(theta_hat):
        return theta_hat.copy()
    if spec.mode == "clamp":
        return np.clip(theta_hat, spec.K_lower, spec.K_upper)
    return spec.theta_fallback.copy()
