"""Linear-algebra substrate: simplex features, Gram matrices, ridge solves, UCB bonus."""

from __future__ import annotations

import numpy as np

SIMPLEX_TOL = 1e-9
REINVERT_EVERY = 64


def check_feature(phi, dim: int | None = None, relaxed: bool = False) -> np.ndarray:
    """Validate a feature vector and return it as a float64 array.

    ``relaxed`` skips the sum-to-one check (environments whose features are
    nonnegative but not normalized).
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 1:
        raise ValueError("feature vector must be one-dimensional")
    if dim is not None and phi.shape[0] != dim:
        raise ValueError(f"feature has dimension {phi.shape[0]}, expected {dim}")
    if np.any(phi < -SIMPLEX_TOL):
        raise ValueError("feature entries must be nonnegative")
    if not relaxed and abs(phi.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"feature entries sum to {phi.sum()!r}, not 1")
    return phi


class GramMatrix:
    """Ridge design matrix ``lam * I + sum phi phi^T`` with a cached inverse.

    The inverse is maintained by Sherman-Morrison and recomputed from scratch
    every ``REINVERT_EVERY`` updates to bound accumulated drift.
    """

    def __init__(self, dim: int, ridge: float = 1.0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        self.dim = int(dim)
        self.ridge = float(ridge)
        self.matrix = self.ridge * np.eye(self.dim)
        self.inverse = np.eye(self.dim) / self.ridge
        self.count = 0

    def copy(self) -> "GramMatrix":
        g = GramMatrix.__new__(GramMatrix)
        g.dim, g.ridge, g.count = self.dim, self.ridge, self.count
        g.matrix = self.matrix.copy()
        g.inverse = self.inverse.copy()
        return g

    def update(self, phi) -> "GramMatrix":
        """In-place rank-one update; returns self for chaining."""
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (self.dim,):
            raise ValueError(f"feature has shape {phi.shape}, expected ({self.dim},)")
        self.matrix += np.outer(phi, phi)
        self.count += 1
        if self.count % REINVERT_EVERY == 0:
            self.inverse = np.linalg.inv(self.matrix)
        else:
            u = self.inverse @ phi
            self.inverse -= np.outer(u, u) / (1.0 + phi @ u)
        # keep the cache exactly symmetric
        self.inverse = 0.5 * (self.inverse + self.inverse.T)
        return self

    def inv_diag_sqrt(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.inverse), 0.0, None))


def gram_update(g: GramMatrix, phi) -> GramMatrix:
    """Return a new Gram matrix with ``phi phi^T`` added; ``g`` is untouched."""
    return g.copy().update(phi)


def gram_from_features(features, dim: int, ridge: float = 1.0) -> GramMatrix:
    """Batch construction, used as the from-scratch reference."""
    g = GramMatrix(dim, ridge)
    features = np.asarray(features, dtype=np.float64).reshape(-1, dim)
    g.matrix = g.ridge * np.eye(dim) + features.T @ features
    g.inverse = np.linalg.inv(g.matrix)
    g.inverse = 0.5 * (g.inverse + g.inverse.T)
    g.count = features.shape[0]
    return g


def ridge_solve(g: GramMatrix, features, targets) -> np.ndarray:
    """``Lambda^{-1} sum_tau phi_tau y_tau``; the zero vector for empty data."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        return np.zeros(g.dim)
    features = np.asarray(features, dtype=np.float64).reshape(-1, g.dim)
    if features.shape[0] != targets.shape[0]:
        raise ValueError("features and targets differ in length")
    return g.inverse @ (features.T @ targets)


def ucb_bonus(g: GramMatrix, phi, beta: float) -> float:
    """``beta * sum_i phi_i * sqrt((Lambda^{-1})_ii)``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[-1] != g.dim:
        raise ValueError("feature dimension mismatch")
    return float(beta * phi @ g.inv_diag_sqrt())


def default_beta(d: int, horizon: int, episodes: int, n_actions: int) -> float:
    """Bonus scale ``d H sqrt(log(d K H |A|))`` with unit constants."""
    return d * horizon * float(np.sqrt(np.log(d * episodes * horizon * n_actions)))
