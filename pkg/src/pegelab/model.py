"""Linear dynamics, parameter space and the two convex cost families.

The controlled state follows ``dX = (A X + B a) dt + dW`` with unknown
``theta = (A, B)``.  Two running-cost families are provided:

* :class:`QuadraticCost` -- ``x'Qx + a'Ra`` with terminal ``x'Gx``;
* :class:`EntropyCost` -- ``fbar0(t, x)'a + h_en(a)`` on the probability
  simplex, with a built-in terminal function.

All functions accept a leading batch axis on states and actions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy.special import logsumexp, softmax

SIMPLEX_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with the model dimensions."""


def _quad(x, M):
    """``x' M x`` over the last axis."""
    if M.shape == (1, 1):
        return M[0, 0] * x[..., 0] ** 2
    return np.sum((x @ M) * x, axis=-1)


def _as_matrix(a, name):
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ParamTheta:
    """Drift parameter ``theta = (A, B)`` with ``A`` (d, d) and ``B`` (d, p)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("theta entries must be finite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def as_matrix(self) -> np.ndarray:
        """Stacked ``[A, B]`` of shape (d, d + p)."""
        return np.hstack([self.A, self.B])

    @classmethod
    def from_matrix(cls, theta, d: int) -> "ParamTheta":
        theta = _as_matrix(theta, "theta")
        if theta.shape[0] != d or theta.shape[1] <= d:
            raise DimensionError(f"cannot split shape {theta.shape} with d={d}")
        return cls(theta[:, :d], theta[:, d:])


@dataclass(frozen=True)
class ParamBox:
    """Coordinatewise box ``lower <= theta <= upper`` of (d, d + p) matrices."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_matrix(self.lower, "lower")
        hi = _as_matrix(self.upper, "upper")
        if lo.shape != hi.shape:
            raise DimensionError("lower and upper shapes differ")
        if not np.all(lo < hi):
            raise ValueError("box requires lower < upper entrywise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, theta) -> bool:
        m = theta.as_matrix() if isinstance(theta, ParamTheta) else np.asarray(theta)
        return bool(np.all(m >= self.lower) and np.all(m <= self.upper))

    def expanded(self, eta: float) -> "ParamBox":
        return ParamBox(self.lower - eta, self.upper + eta)


def drift(theta: ParamTheta, x, a) -> np.ndarray:
    """Return ``A x + B a``; ``x`` (..., d) and ``a`` (..., p)."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    if x.shape[-1:] != (theta.d,) or a.shape[-1:] != (theta.p,):
        raise DimensionError(
            f"state/action shapes {x.shape}/{a.shape} do not match d={theta.d}, p={theta.p}"
        )
    return x @ theta.A.T + a @ theta.B.T


# --------------------------------------------------------------------------
# Entropy and its convex conjugate


def h_en(a) -> np.ndarray:
    """Shannon entropy ``sum a_i ln a_i`` on the simplex, ``+inf`` off it.

    Uses ``0 ln 0 = 0``.  Works on the last axis.
    """
    a = np.asarray(a, dtype=float)
    on = in_simplex(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)
    val = terms.sum(axis=-1)
    return np.where(on, val, np.inf)


def in_simplex(a, tol: float = SIMPLEX_TOL) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return (
        np.all(a >= 0.0, axis=-1)
        & np.all(a <= 1.0, axis=-1)
        & (np.abs(a.sum(axis=-1) - 1.0) <= tol)
    )


def h_star(z) -> np.ndarray:
    """Convex conjugate of :func:`h_en`: log-sum-exp over the last axis."""
    return logsumexp(np.asarray(z, dtype=float), axis=-1)


def grad_h_star(z) -> np.ndarray:
    """Gradient of :func:`h_star` (softmax), renormalised to sum exactly to one."""
    s = softmax(np.asarray(z, dtype=float), axis=-1)
    return s / s.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# Built-in coefficient functions for the entropy family


@dataclass(frozen=True)
class AffineField:
    """``fbar0(t, x) = c + W x`` with ``c`` (p,) and ``W`` (p, d).

    ``W = 0`` gives the constant field.
    """

    c: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        W = _as_matrix(self.W, "W")
        if W.shape[0] != c.shape[0]:
            raise DimensionError("W rows must equal len(c)")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "W", W)

    @classmethod
    def constant(cls, c, d: int = 1) -> "AffineField":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls(c, np.zeros((c.shape[0], d)))

    def __call__(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.c + x @ self.W.T

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.W, 2))

    def to_dict(self):
        return {"kind": "affine", "c": self.c.tolist(), "W": self.W.tolist()}


@dataclass(frozen=True)
class QuadraticTerminal:
    """``g(x) = x'Gx + b'x``."""

    G: np.ndarray
    b: np.ndarray = None

    def __post_init__(self):
        G = _as_matrix(self.G, "G")
        b = np.zeros(G.shape[0]) if self.b is None else np.atleast_1d(np.asarray(self.b, float))
        object.__setattr__(self, "G", 0.5 * (G + G.T))
        object.__setattr__(self, "b", b)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _quad(x, self.G) + x @ self.b

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 2.0 * x @ self.G + self.b

    @property
    def grad_lipschitz(self) -> float:
        return float(2.0 * np.linalg.norm(self.G, 2))

    def to_dict(self):
        return {"kind": "quadratic", "G": self.G.tolist(), "b": self.b.tolist()}


# --------------------------------------------------------------------------
# Cost families


@dataclass(frozen=True)
class QuadraticCost:
    """Smooth quadratic cost ``f = x'Qx + a'Ra``, ``g = x'Gx`` (h = 0)."""

    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray
    variant: str = field(default="quadratic", init=False)

    def __post_init__(self):
        Q, R, G = (_as_matrix(m, n) for m, n in ((self.Q, "Q"), (self.R, "R"), (self.G, "G")))
        for m, n in ((Q, "Q"), (R, "R"), (G, "G")):
            if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{n} must be square symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 or np.linalg.eigvalsh(G).min() < -1e-12:
            raise ValueError("Q and G must be positive semidefinite")
        if Q.shape != G.shape:
            raise DimensionError("Q and G must both be d x d")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "G", G)

    @property
    def strong_convexity(self) -> float:
        """Smallest eigenvalue of ``R``; the ``lambda`` of the convexity margin."""
        return float(np.linalg.eigvalsh(self.R).min())

    def running(self, t, x, a) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        return _quad(x, self.Q) + _quad(a, self.R)

    def terminal(self, x) -> np.ndarray:
        return _quad(np.asarray(x, dtype=float), self.G)

    def to_dict(self):
        return {"kind": "quadratic", "Q": self.Q.tolist(), "R": self.R.tolist(),
                "G": self.G.tolist()}


@dataclass(frozen=True)
class EntropyCost:
    """Entropy-regularised cost ``f = fbar0(t, x)'a + h_en(a)``, terminal ``g``."""

    fbar0: AffineField
    g: QuadraticTerminal
    variant: str = field(default="entropy", init=False)

    @property
    def p(self) -> int:
        return self.fbar0.c.shape[0]

    def running(self, t, x, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        lin = np.sum(self.fbar0(t, x) * a, axis=-1)
        ent = h_en(a)
        # keep +inf exact where the action leaves the simplex
        return np.where(np.isfinite(ent), lin + ent, np.inf)

    def terminal(self, x) -> np.ndarray:
        return self.g(x)

    def to_dict(self):
        return {"kind": "entropy", "fbar0": self.fbar0.to_dict(), "g": self.g.to_dict()}


def eval_running_cost(spec, t, x, a):
    """Running cost ``f(t, x, a)``; ``inf`` when the action is outside ``dom h``."""
    out = spec.running(t, x, a)
    return float(out) if np.ndim(out) == 0 else out


def eval_terminal_cost(spec, x):
    out = spec.terminal(x)
    return float(out) if np.ndim(out) == 0 else out


def example_theta() -> ParamTheta:
    """The incomplete-learning example: d = 1, p = 2, A = 0, B = (1, 1)."""
    return ParamTheta(np.zeros((1, 1)), np.array([[1.0, 1.0]]))


def example_cost() -> QuadraticCost:
    """Cost ``int (a1^2 + a2^2) dt + X_T^2``."""
    return QuadraticCost(np.zeros((1, 1)), np.eye(2), np.ones((1, 1)))


__all__ = [
    "DimensionError", "ParamTheta", "ParamBox", "drift", "h_en", "in_simplex", "h_star",
    "grad_h_star", "AffineField", "QuadraticTerminal", "QuadraticCost", "EntropyCost",
    "eval_running_cost", "eval_terminal_cost", "example_theta", "example_cost",
]
