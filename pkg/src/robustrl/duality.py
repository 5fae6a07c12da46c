"""Total-variation dual problems.

A DRMDP backup needs ``max_{alpha in [0, H]} sum_tau c_tau * min(v_tau, alpha) - rho * alpha``.
The objective is piecewise linear in alpha with kinks only at the ``v_tau``, so
evaluating it at ``{0, H} U {v_tau}`` gives the exact maximum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# relative slack used to call two breakpoint values a tie
TIE_TOL = 1e-12


@dataclass(frozen=True)
class PiecewiseDualInstance:
    coeffs: np.ndarray
    values: np.ndarray
    horizon_cap: float
    rho: float

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "values", v)
        _check_rho_cap(self.rho, self.horizon_cap)
        if c.shape != v.shape:
            raise ValueError("coeffs and values must have equal length")
        if v.size and (v.min() < 0 or v.max() > self.horizon_cap):
            raise ValueError("values must lie in [0, horizon_cap]")


def _check_rho_cap(rho, cap):
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if cap <= 0:
        raise ValueError(f"horizon cap must be positive, got {cap}")


def dual_max_batch(coeffs, values, rho: float, cap: float):
    """Row-wise exact maximization.

    ``coeffs`` has shape (m, n): one row per objective sharing the same ``values``.
    Returns ``(best_values, best_alphas)`` of shape (m,).
    """
    _check_rho_cap(rho, cap)
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    m, n = coeffs.shape
    if n != values.size:
        raise ValueError("coeffs and values must have equal length")
    if n == 0:
        return np.zeros(m), np.zeros(m)

    order = np.argsort(values, kind="stable")
    v = values[order]
    c = coeffs[:, order]
    # at alpha = v[j]: terms with index <= j contribute c*v, the rest c*alpha
    below = np.cumsum(c * v, axis=1)
    above = c.sum(axis=1, keepdims=True) - np.cumsum(c, axis=1)
    at_kinks = below + v * above - rho * v
    at_cap = below[:, -1] - rho * cap

    alphas = np.concatenate(([0.0], v, [cap]))
    objective = np.concatenate((np.zeros((m, 1)), at_kinks, at_cap[:, None]), axis=1)
    best = objective.max(axis=1, keepdims=True)
    slack = TIE_TOL * np.maximum(1.0, np.abs(best))
    # candidates are sorted, so the first near-maximal column is the smallest alpha
    idx = np.argmax(objective >= best - slack, axis=1)
    rows = np.arange(m)
    return objective[rows, idx], alphas[idx]


def drmdp_dual_max(inst: PiecewiseDualInstance) -> tuple[float, float]:
    """Exact ``max_alpha sum c * min(v, alpha) - rho * alpha`` over [0, H].

    Ties go to the smallest maximizing alpha.
    """
    val, alpha = dual_max_batch(inst.coeffs[None, :], inst.values, inst.rho, inst.horizon_cap)
    return float(val[0]), float(alpha[0])


def rrmdp_truncate_targets(values, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return np.minimum(np.asarray(values, dtype=np.float64), sigma)


def exact_dual_value(mu0, v, rho: float) -> float:
    """Worst-case expectation of ``v`` over the TV ball of radius ``rho`` around ``mu0``.

    Requires a zero-value state (``min v == 0``); that is what lets the dual
    drop its ``min_s [V]_alpha`` term.
    """
    mu0 = np.asarray(mu0, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if mu0.shape != v.shape:
        raise ValueError("mu0 and v must have equal length")
    if abs(mu0.sum() - 1.0) > 1e-12 or np.any(mu0 < 0):
        raise ValueError("mu0 must be a probability vector")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if v.min() > 1e-9:
        raise ValueError("value function has no zero-value (fail) state")
    if np.any(v < -1e-9):
        raise ValueError("values must be nonnegative")
    cap = float(v.max())
    if rho == 0.0:
        return float(mu0 @ v)
    if cap <= 0.0:
        return 0.0
    val, _ = dual_max_batch(mu0[None, :], v, rho, cap)
    return float(val[0])


def truncated_expectation(mu0, v, sigma: float) -> float:
    """``E_{mu0} min(v, sigma)``: the TV-penalized worst case given a zero-value state."""
    return float(np.asarray(mu0, dtype=np.float64) @ rrmdp_truncate_targets(v, sigma))


def brute_force_dual(mu0, v, rho: float, grid_step: float, cap: float | None = None) -> float:
    """Grid search over alpha of ``E_{mu0} min(v, alpha) - rho * alpha``. Test oracle only."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    mu0 = np.asarray(mu0, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if cap is None:
        cap = float(v.max()) if v.size else 0.0
    grid = np.arange(0.0, cap + 0.5 * grid_step, grid_step)
    grid = np.minimum(grid, cap)
    best = -np.inf
    # chunk the grid to keep memory flat
    for start in range(0, grid.size, 20000):
        g = grid[start:start + 20000]
        obj = np.minimum(v[None, :], g[:, None]) @ mu0 - rho * g
        best = max(best, float(obj.max()))
    return best
