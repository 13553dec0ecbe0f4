"""Feedback policies ``(t, x) -> a`` and their tabulated forms.

A policy is evaluated by the simulation engine through :meth:`Policy.tabulate`,
which fixes it on a time grid.  Affine-in-state policies tabulate to an
:class:`AffineTable` so whole batches of episodes can be advanced with one
array operation per time step.
"""
from __future__ import annotations

import numpy as np


class Policy:
    """Base class for Lipschitz feedback laws.

    Subclasses implement ``__call__(t, x)`` for ``x`` of shape (..., d) and
    return actions of shape (..., p).
    """

    kind = "generic"

    def __init__(self, d: int, p: int, lipschitz_budget: float):
        self.d = int(d)
        self.p = int(p)
        self.lipschitz_budget = float(lipschitz_budget)

    def __call__(self, t, x):
        raise NotImplementedError

    def tabulate(self, grid):
        return CallableTable(self)

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, d={self.d}, p={self.p})"


class CallableTable:
    """Fallback table: evaluate the policy object directly at each step."""

    def __init__(self, policy: Policy):
        self.policy = policy

    @staticmethod
    def stack(tables, grid):
        times = grid.times

        def evaluate(k, X, members):
            out = np.empty((X.shape[0], tables[0].policy.p))
            for j, tab in enumerate(tables):
                sel = members == j
                if np.any(sel):
                    out[sel] = tab.policy(times[k], X[sel])
            return out

        return evaluate


class AffineTable:
    """``a_k = gain[k] @ x + offset[k]`` on the nodes of a time grid."""

    def __init__(self, gain, offset):
        self.gain = np.asarray(gain, dtype=float)  # (n+1, p, d)
        self.offset = np.asarray(offset, dtype=float)  # (n+1, p)

    @staticmethod
    def stack(tables, grid):
        gains = np.stack([t.gain for t in tables])
        offsets = np.stack([t.offset for t in tables])

        def evaluate(k, X, members):
            return np.einsum("spd,sd->sp", gains[members, k], X) + offsets[members, k]

        return evaluate


def _node_index(times, t):
    """Nearest node of a uniform grid ``times`` for time(s) ``t``."""
    n = len(times) - 1
    if n == 0:
        return np.zeros(np.shape(t), dtype=int)
    dt = (times[-1] - times[0]) / n
    idx = np.rint((np.asarray(t, dtype=float) - times[0]) / dt).astype(int)
    return np.clip(idx, 0, n)


class AffinePolicy(Policy):
    """Time-tabulated affine feedback ``psi(t, x) = K(t) x + c(t)``.

    ``K`` and ``c`` are read at the nearest node of ``times``.
    """

    kind = "affine"

    def __init__(self, times, gains, offsets, lipschitz_budget=None, kind=None):
        gains = np.asarray(gains, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        n1, p, d = gains.shape
        if offsets.shape != (n1, p) or len(times) != n1:
            raise ValueError("times, gains and offsets disagree in length")
        if lipschitz_budget is None:
            lipschitz_budget = max(
                float(np.linalg.norm(gains, ord=2, axis=(1, 2)).max()),
                float(np.linalg.norm(offsets, axis=1).max()),
            )
        super().__init__(d, p, lipschitz_budget)
        self.times = np.asarray(times, dtype=float)
        self.gains = gains
        self.offsets = offsets
        if kind is not None:
            self.kind = kind

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        k = _node_index(self.times, t)
        if np.ndim(k) == 0:
            return x @ self.gains[k].T + self.offsets[k]
        return np.einsum("...pd,...d->...p", self.gains[k], x) + self.offsets[k]

    def tabulate(self, grid):
        if len(self.times) == len(grid.times) and np.array_equal(self.times, grid.times):
            return AffineTable(self.gains, self.offsets)
        k = _node_index(self.times, grid.times)
        return AffineTable(self.gains[k], self.offsets[k])


class ConstantPolicy(Policy):
    """``psi(t, x) = a`` for all ``(t, x)``."""

    kind = "constant"

    def __init__(self, action, d: int):
        action = np.atleast_1d(np.asarray(action, dtype=float))
        super().__init__(d, action.shape[0], float(np.linalg.norm(action)))
        self.action = action

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.action, x.shape[:-1] + (self.p,)).copy()

    def tabulate(self, grid):
        n1 = grid.n_steps + 1
        return AffineTable(np.zeros((n1, self.p, self.d)), np.tile(self.action, (n1, 1)))


class ZeroPolicy(ConstantPolicy):
    kind = "zero"

    def __init__(self, d: int, p: int):
        super().__init__(np.zeros(p), d)


class ExplorationPolicy(Policy):
    """Piecewise-constant, state-independent policy: ``a_k`` on ``[t_{k-1}, t_k)``.

    The last action is also used at the terminal time.
    """

    kind = "exploration"

    def __init__(self, actions, partition, d: int):
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        partition = np.asarray(partition, dtype=float)
        super().__init__(d, actions.shape[1], float(np.linalg.norm(actions, axis=1).max()))
        self.actions = actions
        self.partition = partition

    def cell(self, t):
        k = np.searchsorted(self.partition, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(k, 0, len(self.actions) - 1)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        a = self.actions[self.cell(t)]
        return np.broadcast_to(a, x.shape[:-1] + (self.p,)).copy()

    def tabulate(self, grid):
        n1 = grid.n_steps + 1
        return AffineTable(np.zeros((n1, self.p, self.d)), self.actions[self.cell(grid.times)])


def stack_evaluator(tables, grid):
    """Build ``evaluate(k, X, members)`` for a list of per-member tables.

    ``members[s]`` is the index into ``tables`` used by batch row ``s``.
    Tables of the same class are stacked; mixed classes are dispatched
    group by group.
    """
    classes = {type(t) for t in tables}
    if len(classes) == 1:
        return type(tables[0]).stack(tables, grid)

    groups = {}
    for j, t in enumerate(tables):
        groups.setdefault(type(t), []).append(j)
    sub = {cls: (np.array(idx), cls.stack([tables[j] for j in idx], grid))
           for cls, idx in groups.items()}
    remap = np.empty(len(tables), dtype=int)
    for idx, _ in sub.values():
        remap[idx] = np.arange(len(idx))
    p = None

    def evaluate(k, X, members):
        nonlocal p
        out = None
        for idx, ev in sub.values():
            sel = np.isin(members, idx)
            if not np.any(sel):
                continue
            a = ev(k, X[sel], remap[members[sel]])
            if out is None:
                p = a.shape[1]
                out = np.empty((X.shape[0], p))
            out[sel] = a
        return out

    return evaluate
