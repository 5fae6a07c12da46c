"""KL-regularized softmax policies over finite action sets.

Everything here works row-wise: ``q`` and ``ref`` may be a single action
vector or a stack of them with actions on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def _as_ref(ref) -> np.ndarray:
    ref = np.asarray(ref, dtype=np.float64)
    if np.any(ref < 0):
        raise ValueError("reference probabilities must be nonnegative")
    if np.any(ref.sum(axis=-1) <= 0):
        raise ValueError("reference policy has no mass at some state")
    return ref


def softmax_probs(ref, q, eta: float) -> np.ndarray:
    """``ref * exp(eta * (q - max q))`` renormalized; zero-reference actions stay at zero."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    ref = _as_ref(ref)
    q = np.asarray(q, dtype=np.float64)
    support = ref > 0
    shifted = np.where(support, q, -np.inf)
    top = shifted.max(axis=-1, keepdims=True)
    w = np.where(support, ref * np.exp(eta * (np.where(support, q, 0.0) - top)), 0.0)
    return w / w.sum(axis=-1, keepdims=True)


def kl_divergence(p, ref) -> np.ndarray:
    """``sum p log(p / ref)`` with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if np.any((p > 0) & (ref <= 0)):
        raise ValueError("policy puts mass outside the reference support")
    pos = p > 0
    terms = np.where(pos, p * (np.log(np.where(pos, p, 1.0)) - np.log(np.where(pos, ref, 1.0))), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def log_partition_value(ref, q, eta: float) -> np.ndarray:
    """``(1/eta) log E_{a~ref} exp(eta q(a))`` via a max-shifted log-sum-exp."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    ref = _as_ref(ref)
    q = np.asarray(q, dtype=np.float64)
    support = ref > 0
    top = np.where(support, q, -np.inf).max(axis=-1, keepdims=True)
    w = np.where(support, ref * np.exp(eta * (np.where(support, q, 0.0) - top)), 0.0)
    return top[..., 0] + np.log(w.sum(axis=-1)) / eta


def greedy_probs(q, ref=None) -> np.ndarray:
    """One-hot on the argmax, smallest index on ties (restricted to ref support if given)."""
    q = np.asarray(q, dtype=np.float64)
    if ref is not None:
        q = np.where(np.asarray(ref) > 0, q, -np.inf)
    idx = np.argmax(q, axis=-1)
    out = np.zeros(q.shape)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def sample_from(probs, u) -> np.ndarray:
    """Inverse-CDF draw: one uniform variate per row."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1, 1) * cdf[:, -1:]
    idx = (cdf <= u).sum(axis=-1)
    # guard round-off at the top end and never land on a zero-probability action
    idx = np.minimum(idx, probs.shape[-1] - 1)
    bad = probs[np.arange(len(idx)), idx] <= 0
    if np.any(bad):
        last_pos = probs.shape[-1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=-1)
        idx = np.where(bad, last_pos, idx)
    return idx


class ReferencePolicy:
    """Per-step reference action distributions.

    ``probs`` is either an (A,) vector shared by every step and state, an
    (H, A) array (state-independent per step), or a callable ``(h, states) -> (n, A)``.
    Steps are 1-indexed throughout the package.
    """

    def __init__(self, probs, n_actions: int | None = None):
        if callable(probs):
            self._fn = probs
            self._table = None
            if n_actions is None:
                raise ValueError("n_actions is required for callable references")
            self.n_actions = int(n_actions)
            return
        table = _as_ref(probs)
        if np.any(np.abs(table.sum(axis=-1) - 1.0) > 1e-12):
            raise ValueError("reference rows must sum to 1")
        self._fn = None
        self._table = table
        self.n_actions = table.shape[-1]

    @classmethod
    def uniform(cls, n_actions: int) -> "ReferencePolicy":
        return cls(np.full(n_actions, 1.0 / n_actions))

    def probs(self, h: int, states) -> np.ndarray:
        n = np.asarray(states).reshape(-1).shape[0]
        if self._fn is not None:
            return _as_ref(self._fn(h, states))
        row = self._table if self._table.ndim == 1 else self._table[h - 1]
        return np.broadcast_to(row, (n, self.n_actions))


QFunction = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class SoftmaxPolicy:
    """``pi_h(a|s) ∝ ref_h(a|s) exp(eta Q_h(s, a))``, evaluated lazily.

    ``q`` maps ``(h, states)`` to an (n, A) array of Q-values.
    """

    reference: ReferencePolicy
    eta: float
    q: QFunction

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    def probs(self, h: int, states) -> np.ndarray:
        states = np.asarray(states).reshape(-1)
        return softmax_probs(self.reference.probs(h, states), self.q(h, states), self.eta)

    def action_probs(self, h: int, s) -> np.ndarray:
        return self.probs(h, [s])[0]

    def kl_to_reference(self, h: int, s) -> float:
        ref = self.reference.probs(h, [s])[0]
        return float(kl_divergence(self.action_probs(h, s), ref))

    def regularized_value(self, h: int, s) -> float:
        ref = self.reference.probs(h, [s])[0]
        return float(log_partition_value(ref, self.q(h, np.asarray([s]))[0], self.eta))

    def values(self, h: int, states) -> np.ndarray:
        states = np.asarray(states).reshape(-1)
        return log_partition_value(self.reference.probs(h, states), self.q(h, states), self.eta)

    def sample_action(self, h: int, s, rng: np.random.Generator) -> int:
        return int(sample_from(self.action_probs(h, s), rng.random())[0])


@dataclass
class GreedyPolicy:
    """Argmax policy over a Q handle (smallest index on ties)."""

    q: QFunction
    n_actions: int

    def probs(self, h: int, states) -> np.ndarray:
        states = np.asarray(states).reshape(-1)
        return greedy_probs(self.q(h, states))

    def action_probs(self, h: int, s) -> np.ndarray:
        return self.probs(h, [s])[0]

    def sample_action(self, h: int, s, rng: np.random.Generator) -> int:
        return int(np.argmax(self.action_probs(h, s)))


@dataclass
class FixedPolicy:
    """Wraps a reference policy so it can be rolled out like a learned one."""

    reference: ReferencePolicy

    def probs(self, h: int, states) -> np.ndarray:
        return np.array(self.reference.probs(h, states))

    def action_probs(self, h: int, s) -> np.ndarray:
        return self.probs(h, [s])[0]

    def sample_action(self, h: int, s, rng: np.random.Generator) -> int:
        return int(sample_from(self.action_probs(h, s), rng.random())[0])
