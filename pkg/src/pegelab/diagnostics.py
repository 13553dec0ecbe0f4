"""Empirical Orlicz norms and Bernstein-type tail checks."""
from __future__ import annotations

from dataclasses import dataclass
import csv
import json
import logging

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

TARGET = np.log(2.0)


@dataclass(frozen=True)
class OrliczEstimate:
    q: int
    K_hat: float
    n_samples: int
    bracket: tuple
    degenerate: bool = False
    surrogate: str = "unconditional"

    def moment(self, samples) -> float:
        """Empirical ``mean(exp(|X|^q / K_hat^q))`` at the estimate."""
        a = np.abs(np.asarray(samples, dtype=float)) ** self.q
        return float(np.exp(logsumexp(a / self.K_hat ** self.q) - np.log(a.size)))

    def to_json(self) -> str:
        return json.dumps({"q": self.q, "K_hat": self.K_hat, "n_samples": self.n_samples,
                           "bracket": list(self.bracket), "degenerate": self.degenerate,
                           "surrogate": self.surrogate})


def _log_moment(a, K, q):
    return logsumexp(a / K ** q) - np.log(a.size)


def estimate_orlicz_norm(samples, q: int, n_iter: int = 60,
                         surrogate: str = "unconditional") -> OrliczEstimate:
    """Solve ``mean(exp(|X_i|^q / K^q)) = 2`` for ``K`` by bisection.

    The bisection runs on ``log K`` over ``[1e-6 max|X|, 10 max|X|]`` and the
    moment is evaluated as a log-sum-exp, so tiny ``K`` cannot overflow.
    """
    if q not in (1, 2):
        raise ValueError("q must be 1 or 2")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    top = float(np.abs(x).max())
    if top == 0:
        return OrliczEstimate(q, 0.0, x.size, (0.0, 0.0), True, surrogate)
    a = np.abs(x) ** q
    lo, hi = np.log(1e-6 * top), np.log(10 * top)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        if _log_moment(a, np.exp(mid), q) > TARGET:
            lo = mid
        else:
            hi = mid
    return OrliczEstimate(q, float(np.exp(0.5 * (lo + hi))), x.size,
                          (float(np.exp(lo)), float(np.exp(hi))), False, surrogate)


@dataclass(frozen=True)
class BernsteinTable:
    eps: np.ndarray
    emp_tail: np.ndarray
    bound_shape: np.ndarray
    cprime_fit: float
    n_seeds: int
    few_seeds: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "emp_tail", "bound_shape", "cprime_fit"])
            for e, f, b in zip(self.eps, self.emp_tail, self.bound_shape):
                w.writerow([repr(float(e)), repr(float(f)), repr(float(b)),
                            repr(float(self.cprime_fit))])


def bernstein_tail_check(differences, eps_grid) -> BernsteinTable:
    """Empirical ``P(|sum_n D_n| >= N eps)`` against the shape ``N min(eps^2, eps)``.

    Each row of ``differences`` is one realisation of a centred sequence.
    ``C'`` is the least-squares slope (through the origin) of ``-ln freq`` on
    the shape, over the ``eps`` with ``0 < freq < 1``; NaN if none qualify.
    """
    D = np.atleast_2d(np.asarray(differences, dtype=float))
    n_seeds, N = D.shape
    few = n_seeds < 30
    if few:
        log.warning("only %d realisations; tail frequencies are unreliable", n_seeds)
    eps = np.asarray(eps_grid, dtype=float)
    sums = np.abs(D.sum(axis=1))
    freq = np.array([np.mean(sums >= N * e) for e in eps])
    shape = N * np.minimum(eps ** 2, eps)
    ok = (freq > 0) & (freq < 1) & (shape > 0)
    if ok.any():
        y = -np.log(freq[ok])
        cfit = float(np.dot(shape[ok], y) / np.dot(shape[ok], shape[ok]))
    else:
        cfit = float("nan")
    return BernsteinTable(eps, freq, shape, cfit, n_seeds, few)
