"""Exact backward induction for policy-regularized robust values on tabular factor models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .duality import exact_dual_value, truncated_expectation
from .policy import ReferencePolicy, greedy_probs, kl_divergence, log_partition_value, softmax_probs

ORACLE_MODES = ("drmdp", "rrmdp")


@dataclass
class OracleResult:
    mode: str
    level: float  # rho for drmdp, sigma for rrmdp
    eta: float
    V: np.ndarray  # (H+1, S); V[H] == 0
    Q: np.ndarray  # (H, S, A)
    policy: np.ndarray  # (H, S, A)
    nu: np.ndarray  # (H, d)
    ref: np.ndarray  # (H, S, A) reference probabilities used

    def value(self, h: int, s: int) -> float:
        return float(self.V[h - 1, s])


def _check(model, mode: str, level: float):
    if not getattr(model, "tabular", False):
        raise TypeError("the oracle needs a tabular factor model")
    if getattr(model, "fail_state", None) is None:
        raise ValueError("model has no fail state")
    if mode not in ORACLE_MODES:
        raise ValueError(f"mode must be one of {ORACLE_MODES}")
    if mode == "drmdp" and not 0.0 <= level <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if mode == "rrmdp" and not level > 0:
        raise ValueError("sigma must be positive")


def robust_factor_values(model, h: int, v_next: np.ndarray, mode: str, level: float) -> np.ndarray:
    """Worst-case continuation per factor at step ``h`` against ``V_{h+1} = v_next``.

    Values are shifted so their minimum is zero before dualizing. For optimal
    values the fail state already sits at zero and the shift is exactly 0; it
    matters for arbitrary policies, whose KL penalty can push values below zero.
    """
    mu = model.mu[h - 1]
    floor = float(v_next.min())
    v = v_next - floor
    if mode == "drmdp":
        return floor + np.array([exact_dual_value(mu[i], v, level) for i in range(model.d)])
    return floor + np.array([truncated_expectation(mu[i], v, level) for i in range(model.d)])


def _ref_table(model, ref: ReferencePolicy, h: int) -> np.ndarray:
    return np.asarray(ref.probs(h, np.arange(model.n_states)), dtype=np.float64)


def _backup(model, h, v_next, mode, level, rewards):
    nu = robust_factor_values(model, h, v_next, mode, level)
    q = rewards[h - 1] + model.phi @ nu
    q[model.fail_state] = 0.0
    return q, nu


def oracle_optimal(model, mode: str, level: float, eta: float,
                   ref: ReferencePolicy | None = None) -> OracleResult:
    _check(model, mode, level)
    ref = ref or ReferencePolicy.uniform(model.n_actions)
    H, S, A = model.H, model.n_states, model.n_actions
    rewards = model.reward_table()
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    pi = np.zeros((H, S, A))
    nus = np.zeros((H, model.d))
    refs = np.zeros((H, S, A))
    for h in range(H, 0, -1):
        Q[h - 1], nus[h - 1] = _backup(model, h, V[h], mode, level, rewards)
        r = refs[h - 1] = _ref_table(model, ref, h)
        pi[h - 1] = softmax_probs(r, Q[h - 1], eta)
        V[h - 1] = log_partition_value(r, Q[h - 1], eta)
    return OracleResult(mode, level, eta, V, Q, pi, nus, refs)


def oracle_policy_value(model, mode: str, level: float, eta: float, ref: ReferencePolicy | None,
                        policy: np.ndarray):
    """``(V, Q)`` of an explicit (H, S, A) policy table under the regularized robust recursion."""
    _check(model, mode, level)
    ref = ref or ReferencePolicy.uniform(model.n_actions)
    H, S, A = model.H, model.n_states, model.n_actions
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (H, S, A):
        raise ValueError(f"policy table must have shape {(H, S, A)}")
    rewards = model.reward_table()
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H, 0, -1):
        r = _ref_table(model, ref, h)
        if np.any((policy[h - 1] > 0) & (r <= 0)):
            raise ValueError(f"policy leaves the reference support at step {h}")
        Q[h - 1], _ = _backup(model, h, V[h], mode, level, rewards)
        V[h - 1] = (policy[h - 1] * Q[h - 1]).sum(-1) - kl_divergence(policy[h - 1], r) / eta
    return V, Q


def bellman_residual(model, result: OracleResult) -> float:
    """Largest violation of the Q and V recursions (Q must vanish at the fail state)."""
    rewards = model.reward_table()
    worst = 0.0
    for h in range(1, model.H + 1):
        nu = robust_factor_values(model, h, result.V[h], result.mode, result.level)
        resid = result.Q[h - 1] - rewards[h - 1] - model.phi @ nu
        resid[model.fail_state] = result.Q[h - 1, model.fail_state]
        v_resid = result.V[h - 1] - log_partition_value(result.ref[h - 1], result.Q[h - 1], result.eta)
        worst = max(worst, float(np.abs(resid).max()), float(np.abs(v_resid).max()))
    return worst


def expected_return(model, policy: np.ndarray, target: bool = False) -> float:
    """Plain (unregularized) expected return from the initial state under one kernel."""
    mu = model.target_mu if target else model.mu
    rewards = model.reward_table()
    v = np.zeros(model.n_states)
    for h in range(model.H, 0, -1):
        P = np.einsum("sad,dt->sat", model.phi, mu[h - 1])
        q = rewards[h - 1] + P @ v
        v = (policy[h - 1] * q).sum(-1)
    return float(v[model.initial_state])


def policy_table(model, params, cfg) -> np.ndarray:
    """Materialize the behaviour policy of a Q-estimate over every (h, s)."""
    H = model.H
    states = np.arange(model.n_states)
    out = np.zeros((H, model.n_states, model.n_actions))
    ref = cfg.resolved_reference(model)
    for h in range(1, H + 1):
        q = params.q(h, states)
        if cfg.soft:
            out[h - 1] = softmax_probs(ref.probs(h, states), q, cfg.eta)
        else:
            out[h - 1] = greedy_probs(q)
    return out


def ave_subopt(log, oracle: OracleResult, model, cfg) -> float:
    """``(1/K) sum_k (V_1^*(s_1) - V_1^{pi^k}(s_1))`` where ``pi^k`` drove episode ``k``."""
    if not getattr(model, "tabular", False):
        raise TypeError("average suboptimality needs a tabular model")
    ref = cfg.resolved_reference(model)
    gaps = np.zeros(log.episodes)
    for k in range(1, log.episodes + 1):
        pi = policy_table(model, log.params_before(model, k), cfg)
        V, _ = oracle_policy_value(model, oracle.mode, oracle.level, oracle.eta, ref, pi)
        s1 = int(log.states[k - 1, 0])
        gaps[k - 1] = oracle.V[0, s1] - V[0, s1]
    return float(gaps.mean())
